#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "spmim/spatial_mask.hpp"
#include "spmim/tensor.hpp"

namespace spmim {

// A learnable tensor plus its gradient slot. Layers own Parameters; graphs
// only borrow them for the duration of one forward/backward pass.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {}
  void zero_grad() { grad = Tensor::zeros(value.shape()); }
};

class Graph;

// Handle to a node on a Graph tape.
struct Var {
  Graph* graph = nullptr;
  int id = -1;

  bool valid() const { return graph != nullptr && id >= 0; }
  const Tensor& value() const;
  const Tensor& grad() const;
  const Shape& shape() const { return value().shape(); }
};

// Reverse-mode tape over the closed set of primitives below. Nodes are
// appended in execution order, so the tape is already topologically sorted.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, int self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  Var input(Tensor value, bool requires_grad = true);
  // Leaf tied to a Parameter; backward() writes its gradient into p.grad.
  Var param(Parameter& p);

  // Records an op node. `fn` is only invoked if some input requires grad.
  Var record(Tensor value, std::vector<int> inputs, BackwardFn fn);

  const Tensor& value(int id) const { return nodes_.at(static_cast<std::size_t>(id)).value; }
  const Tensor& grad(int id) const;
  bool requires_grad(int id) const { return nodes_.at(static_cast<std::size_t>(id)).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Gradient slot of node `id`, allocated (zeroed) on first use.
  Tensor& grad_slot(int id);

  // Accumulates d(loss)/d(node) for every node; parameter leaves get their
  // gradient copied into Parameter::grad (zero if the loss does not reach them).
  // A tape supports a single backward pass.
  void backward(Var loss);
  bool backward_done() const { return backward_done_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<int> inputs;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };

  std::deque<Node> nodes_;
  bool backward_done_ = false;
};

enum class Mode { kTrain, kEval };

struct Conv2dOptions {
  int stride = 1;
  int padding = 0;       // zeros before the first row/column
  int groups = 1;
  int padding_end = -1;  // zeros after the last row/column; -1 = same as padding

  int trailing_padding() const { return padding_end < 0 ? padding : padding_end; }
};

// Output spatial extent (in + pad_begin + pad_end - k) / s + 1; throws
// GeometryError unless the division is exact and the result positive.
int conv_output_extent(int input, int kernel, int stride, int padding, int padding_end = -1);

// Running statistics of a batch-norm layer (mutated in train mode).
struct BatchNormStats {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  double eps = 1e-5;
};

namespace ops {

// Cross-correlation. When `active_out` is given, only visible output
// positions are computed and the rest are exactly zero; visible outputs are
// bitwise identical to the unrestricted computation.
Var conv2d(Var input, Var weight, std::optional<Var> bias, const Conv2dOptions& opt,
           const SpatialMask* active_out = nullptr);

Var relu6(Var x);
Var upsample_nearest2x(Var x);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var x, double factor);
Var square(Var x);
Var sum(Var x);
Var mean(Var x);

// Elementwise product with a constant tensor of the same shape.
Var mul_const(Var x, const Tensor& factor);

// Zeroes masked spatial positions across all channels (select, not multiply).
Var mask_zero(Var x, const SpatialMask& mask);

// Visible positions keep `x`; masked positions receive the broadcast vector
// `fill` of shape [C].
Var fill_masked(Var x, const SpatialMask& mask, Var fill);

// Batch normalization over (N, H, W) per channel. With a mask, statistics
// come from visible positions only and masked outputs are zero. Train mode
// updates `stats` with momentum; eval mode reads them.
Var batch_norm(Var x, Var gamma, Var beta, BatchNormStats& stats, Mode mode,
               const SpatialMask* mask = nullptr);

Var global_avg_pool(Var x);                 // [N,C,H,W] -> [N,C]
Var linear(Var x, Var weight, Var bias);    // [N,F] x [K,F] + [K] -> [N,K]

// Mean softmax cross-entropy over the batch.
Var softmax_cross_entropy(Var logits, const std::vector<int>& labels);

// Mean of squared differences over masked pixels of every channel and
// sample. `pixel_mask` uses the library convention (1 = visible), so the
// loss reads the zeros. Throws ArgumentError if nothing is masked.
Var masked_mse(Var recon, const Tensor& target, const SpatialMask& pixel_mask);

}  // namespace ops

// Softmax of each row of [N,K] logits.
Tensor softmax_rows(const Tensor& logits);

}  // namespace spmim
