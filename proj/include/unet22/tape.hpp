#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "unet22/tensor.hpp"

namespace unet22 {

// One recorded differentiable operation. Values the backward rule needs are
// captured inside the closure; `inputs` keeps the operand tensors alive and
// lets diagnostics walk the graph.
template <typename S>
struct TapeNodeT {
    const char* op_kind;
    std::vector<TensorT<S>> inputs;
    TensorT<S> output;
    std::function<void()> backward;
};

// Reverse-mode tape. Append-only during the forward pass; backward visits
// nodes exactly once in reverse append order. Ops record themselves onto the
// thread's active tape (see TapeScopeT); with no active tape, forwards run
// without recording.
template <typename S>
class TapeT {
  public:
    TapeT() = default;
    TapeT(const TapeT&) = delete;
    TapeT& operator=(const TapeT&) = delete;

    static TapeT* active() { return active_slot(); }

    void record(const char* op_kind, std::vector<TensorT<S>> inputs, const TensorT<S>& output,
                std::function<void()> backward) {
        if (consumed_)
            throw ContractError("tape already consumed by backward; reset() before reuse");
        TensorT<S> out = output;
        out.set_requires_grad(true);
        nodes_.push_back(TapeNodeT<S>{op_kind, std::move(inputs), out, std::move(backward)});
    }

    // Seeds d(loss)/d(loss) = 1 and propagates through the tape in reverse.
    // Nodes whose output never received a gradient are dead branches and are
    // skipped. A second call without reset() is an error.
    void backward(const TensorT<S>& loss) {
        if (consumed_) throw ContractError("backward called twice without reset");
        if (nodes_.empty()) throw ContractError("backward on an empty tape");
        if (loss.numel() != 1)
            throw ContractError("backward requires a scalar loss, got shape " +
                                shape_str(loss.shape()));
        TensorT<S> l = loss;
        l.grad_vec()[0] = S(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            if (it->output.has_grad()) it->backward();
        }
        consumed_ = true;
    }

    void reset() {
        nodes_.clear();
        consumed_ = false;
    }

    size_t size() const { return nodes_.size(); }
    bool consumed() const { return consumed_; }
    const TapeNodeT<S>& node(size_t i) const { return nodes_[i]; }

  private:
    template <typename>
    friend class TapeScopeT;

    static TapeT*& active_slot() {
        thread_local TapeT* t = nullptr;
        return t;
    }

    std::vector<TapeNodeT<S>> nodes_;
    bool consumed_ = false;
};

// RAII installer for the thread's active tape.
template <typename S>
class TapeScopeT {
  public:
    explicit TapeScopeT(TapeT<S>& tape) : prev_(TapeT<S>::active_slot()) {
        TapeT<S>::active_slot() = &tape;
    }
    ~TapeScopeT() { TapeT<S>::active_slot() = prev_; }
    TapeScopeT(const TapeScopeT&) = delete;
    TapeScopeT& operator=(const TapeScopeT&) = delete;

  private:
    TapeT<S>* prev_;
};

namespace detail {

// True when the op should be recorded: a tape is active and some input wants
// gradients.
template <typename S>
inline bool tracing(std::initializer_list<const TensorT<S>*> inputs) {
    if (TapeT<S>::active() == nullptr) return false;
    for (const TensorT<S>* t : inputs)
        if (t->requires_grad()) return true;
    return false;
}

}  // namespace detail

}  // namespace unet22
