#pragma once

#include <functional>
#include <unordered_map>
#include <vector>

#include "leansplat/array.hpp"

namespace leansplat {

// Reverse-mode autodiff tape. Confined to a single thread: ops append nodes
// in execution order and backward() replays them in exact reverse.
class Tape {
public:
    using BackwardFn = std::function<std::vector<Array>(const std::vector<Array>& grad_outputs)>;

    struct Node {
        const char* name;
        std::vector<uint64_t> input_ids;
        std::vector<std::vector<int64_t>> input_shapes;
        std::vector<uint64_t> output_ids;
        std::vector<std::vector<int64_t>> output_shapes;
        DType dtype;
        BackwardFn backward;
    };

    // Populates gradients for every array reachable from `loss`. A second
    // call without reset() throws (double backward is unsupported).
    void backward(const Array& loss);

    // Gradient of `a`; zeros if `a` never influenced the loss.
    Array grad(const Array& a) const;
    bool has_grad(const Array& a) const;

    void reset();
    size_t size() const { return nodes_.size(); }
    bool backward_done() const { return backward_done_; }

    void record(Node node) { nodes_.push_back(std::move(node)); }

    static Tape* current();

private:
    std::vector<Node> nodes_;
    std::unordered_map<uint64_t, Array> grads_;
    bool backward_done_ = false;

    friend struct TapeScope;
};

// Makes `tape` the recording target for the current thread.
struct TapeScope {
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    Tape* prev;
};

struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    bool prev;
};

bool grad_enabled();

// True when an op with these inputs should be recorded on the current tape.
bool should_record(std::initializer_list<const Array*> inputs);

// Marks outputs as grad-requiring and records the node on the current tape.
void record_op(const char* name, const std::vector<Array>& inputs, std::vector<Array*> outputs,
               Tape::BackwardFn backward);

}  // namespace leansplat
