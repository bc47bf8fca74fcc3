#pragma once

#include <functional>
#include <initializer_list>
#include <vector>

#include "emd/tensor.hpp"

namespace emd {

// Tape of executed differentiable operations. A graph belongs to one forward
// pass on one thread; backward() replays it in reverse and then frees it.
class Graph {
 public:
  enum class Mode { record, inference };

  explicit Graph(Mode mode = Mode::record) : mode_(mode) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return mode_ == Mode::record; }

  // True when `output` of an op over `inputs` must be taped. Marks the output
  // as gradient-carrying in that case.
  bool track(std::initializer_list<const Tensor*> inputs, Tensor& output) const;

  // Registers the adjoint of an op. `backward_fn` reads output.grad() and
  // accumulates into the inputs that require gradients.
  void record(Tensor output, std::function<void()> backward_fn);

  // Seeds d(loss)/d(loss) = 1 and runs every recorded adjoint once, newest
  // first. The tape is cleared afterwards.
  void backward(Tensor loss);

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  struct Node {
    Tensor output;
    std::function<void()> backward_fn;
  };
  Mode mode_;
  std::vector<Node> nodes_;
};

}  // namespace emd
