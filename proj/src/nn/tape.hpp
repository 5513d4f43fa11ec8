#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "nn/tensor.hpp"
#include "util/errors.hpp"

namespace dk::nn {

// Reverse-mode tape. Ops append nodes in execution order, which is a valid
// topological order of the computation; backward() walks the list once in
// reverse, so every recorded op contributes exactly one gradient step.
template <typename T>
class Tape {
public:
    void record(const char* op, std::shared_ptr<TensorData<T>> out, std::function<void()> backward) {
        out->on_tape = true;
        nodes_.push_back(Node{op, std::move(out), std::move(backward)});
    }

    std::size_t size() const { return nodes_.size(); }

    // Seeds d(loss)/d(loss) = 1 and replays the tape in reverse, accumulating
    // grads into every tensor that participated. The tape is cleared after.
    void backward(const Tensor<T>& loss) {
        if (loss.size() != 1) {
            throw ValidationError("backward requires a scalar loss, got " + shape_str(loss.shape()));
        }
        if (!loss.on_tape() || nodes_.empty() || nodes_.back().out != loss.impl()) {
            throw ValidationError("backward on a tensor that is not the tape's final output");
        }
        loss.impl()->ensure_grad();
        loss.impl()->grad[0] = T(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            if (!it->out->grad.empty()) it->backward();
        }
        for (auto& node : nodes_) node.out->on_tape = false;
        nodes_.clear();
    }

    void clear() {
        for (auto& node : nodes_) node.out->on_tape = false;
        nodes_.clear();
    }

private:
    struct Node {
        const char* op;
        std::shared_ptr<TensorData<T>> out;
        std::function<void()> backward;
    };

    std::vector<Node> nodes_;
};

}  // namespace dk::nn
