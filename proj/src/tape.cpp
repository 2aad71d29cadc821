#include "leansplat/tape.hpp"

namespace leansplat {

namespace {
thread_local Tape* t_current_tape = nullptr;
thread_local bool t_grad_enabled = true;

Array accumulate(const Array& acc, const Array& g) {
    if (!acc.defined()) return g;
    Array out(acc.shape(), acc.dtype());
    dispatch_dtype(acc.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* a = acc.data<T>();
        const T* b = g.data<T>();
        T* o = out.raw<T>();
        for (int64_t i = 0; i < out.numel(); ++i) o[i] = a[i] + b[i];
    });
    return out;
}
}  // namespace

Tape* Tape::current() { return t_current_tape; }

TapeScope::TapeScope(Tape& tape) : prev(t_current_tape) { t_current_tape = &tape; }
TapeScope::~TapeScope() { t_current_tape = prev; }

NoGradGuard::NoGradGuard() : prev(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = prev; }

bool grad_enabled() { return t_grad_enabled; }

bool should_record(std::initializer_list<const Array*> inputs) {
    if (!t_grad_enabled || t_current_tape == nullptr) return false;
    for (const Array* a : inputs) {
        if (a != nullptr && a->defined() && a->requires_grad()) return true;
    }
    return false;
}

void record_op(const char* name, const std::vector<Array>& inputs, std::vector<Array*> outputs,
               Tape::BackwardFn backward) {
    Tape::Node node;
    node.name = name;
    node.backward = std::move(backward);
    node.dtype = outputs.empty() ? DType::F64 : outputs[0]->dtype();
    for (const Array& in : inputs) {
        node.input_ids.push_back(in.id());
        node.input_shapes.push_back(in.shape());
    }
    for (Array* out : outputs) {
        out->set_requires_grad(true);
        node.output_ids.push_back(out->id());
        node.output_shapes.push_back(out->shape());
    }
    Tape::current()->record(std::move(node));
}

void Tape::backward(const Array& loss) {
    LS_CHECK(loss.numel() == 1, "backward() needs a scalar loss, got shape ", loss.shape_str());
    LS_CHECK(!nodes_.empty(), "backward() on an empty tape");
    if (backward_done_) {
        throw NumericError("backward() called twice without reset(); double backward is unsupported");
    }
    NoGradGuard no_grad;
    grads_.clear();
    grads_[loss.id()] = Array::full(loss.shape(), 1.0, loss.dtype());

    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        const Node& node = *it;
        bool any = false;
        for (uint64_t oid : node.output_ids) {
            if (grads_.count(oid)) {
                any = true;
                break;
            }
        }
        if (!any) continue;

        std::vector<Array> grad_outputs;
        grad_outputs.reserve(node.output_ids.size());
        for (size_t i = 0; i < node.output_ids.size(); ++i) {
            auto found = grads_.find(node.output_ids[i]);
            if (found != grads_.end()) {
                grad_outputs.push_back(found->second);
            } else {
                grad_outputs.push_back(Array::zeros(node.output_shapes[i], node.dtype));
            }
        }

        std::vector<Array> grad_inputs = node.backward(grad_outputs);
        LS_CHECK(grad_inputs.size() == node.input_ids.size(), "op '", node.name, "' returned ",
                 grad_inputs.size(), " input grads, expected ", node.input_ids.size());
        for (size_t i = 0; i < grad_inputs.size(); ++i) {
            if (!grad_inputs[i].defined()) continue;
            LS_CHECK(grad_inputs[i].shape() == node.input_shapes[i], "op '", node.name,
                     "' produced grad of shape ", grad_inputs[i].shape_str(), " for input of shape ",
                     shape_to_string(node.input_shapes[i]));
            auto found = grads_.find(node.input_ids[i]);
            if (found == grads_.end()) {
                grads_[node.input_ids[i]] = grad_inputs[i];
            } else {
                found->second = accumulate(found->second, grad_inputs[i]);
            }
        }
    }
    backward_done_ = true;
}

Array Tape::grad(const Array& a) const {
    LS_CHECK(backward_done_, "grad() requested before backward()");
    auto found = grads_.find(a.id());
    if (found != grads_.end()) return found->second;
    return Array::zeros(a.shape(), a.dtype());
}

bool Tape::has_grad(const Array& a) const { return grads_.count(a.id()) > 0; }

void Tape::reset() {
    nodes_.clear();
    grads_.clear();
    backward_done_ = false;
}

}  // namespace leansplat
