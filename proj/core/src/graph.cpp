#include "emd/graph.hpp"

namespace emd {

bool Graph::track(std::initializer_list<const Tensor*> inputs, Tensor& output) const {
  if (!recording()) return false;
  for (const Tensor* t : inputs) {
    if (t && t->defined() && t->requires_grad()) {
      output.set_requires_grad(true);
      return true;
    }
  }
  return false;
}

void Graph::record(Tensor output, std::function<void()> backward_fn) {
  nodes_.push_back(Node{std::move(output), std::move(backward_fn)});
}

void Graph::backward(Tensor loss) {
  if (loss.numel() != 1) {
    throw ShapeError("backward requires a scalar loss, got " + shape_string(loss.shape()));
  }
  if (!loss.requires_grad()) {
    nodes_.clear();
    return;
  }
  loss.mutable_grad()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    // Outputs that never received a gradient contribute nothing upstream.
    if (!it->output.has_grad()) continue;
    it->backward_fn();
  }
  nodes_.clear();
}

}  // namespace emd
