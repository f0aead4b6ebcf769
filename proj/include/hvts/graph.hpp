#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "hvts/rng.hpp"
#include "hvts/tensor.hpp"

namespace hvts::grad {

// Padding behaviour of the convolution ops.  SameTime keeps the width (time)
// axis length unchanged while treating height as valid; Valid shrinks both.
// Even kernels pad one extra sample on the right, matching the convention of
// asymmetric same padding.
enum class Pad { SameTime, Valid };

enum class Phase { Train, Eval };

// Per-layer batch-norm state that persists across forward passes.  Running
// statistics are updated in Train phase only.
struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double eps = 1e-5;
  double momentum = 0.1;

  explicit BatchNormState(int depth = 0)
      : running_mean(depth, 0.0), running_var(depth, 1.0) {}
};

// Reverse-mode tape over Tensor4 values.  Nodes are appended in evaluation
// order, which is a topological order of the DAG, so the backward sweep is a
// single reverse iteration visiting each node exactly once.  Gradients
// accumulate additively, so shared subexpressions are handled naturally.
class Graph {
 public:
  using NodeId = int;

  // Leaves.  requires_grad only controls whether callers read the gradient;
  // the sweep fills gradients for every node.
  NodeId input(Tensor4 value);

  // -- EEGNet-family ops ---------------------------------------------------

  // Grouped 2-d convolution, stride 1.  kernel shape: (out_depth,
  // in_depth/groups, kh, kw).
  NodeId conv2d(NodeId x, NodeId kernel, int groups, Pad pad);

  // Exact adjoint of conv2d with the same kernel layout and padding rules:
  // depth maps out_depth -> in_depth, spatial dims return to their
  // pre-convolution sizes.
  NodeId transpose_conv2d(NodeId x, NodeId kernel, int groups, Pad pad);

  // Per-depth affine batch normalisation.  Train phase normalises with batch
  // statistics (biased variance) and updates the running estimates; Eval
  // phase uses the stored running statistics.
  NodeId batch_norm(NodeId x, NodeId scale, NodeId shift, BatchNormState& state, Phase phase);

  NodeId elu(NodeId x);

  // Non-overlapping average pooling; window must divide the spatial dims.
  NodeId avg_pool(NodeId x, int ph, int pw);

  // Nearest-neighbour upsampling by integer factors.
  NodeId upsample(NodeId x, int fh, int fw);

  // Inverted dropout with keep-probability 1-p; identity in Eval phase.
  NodeId dropout(NodeId x, double p, Phase phase, Rng& rng);

  // -- glue ops --------------------------------------------------------

  NodeId add(NodeId a, NodeId b);
  NodeId bias_add(NodeId x, NodeId bias);  // bias shape (1, d, 1, 1)
  NodeId scale_by(NodeId x, double s);
  NodeId slice_depth(NodeId x, int from, int to);  // keeps depths [from, to)

  // z = mu + exp(0.5 * logvar) * eps with eps held constant.
  NodeId reparam(NodeId mu, NodeId logvar, Tensor4 eps);

  // 0.5 * sum(exp(logvar) + mu^2 - 1 - logvar), returned as a scalar node.
  NodeId kl_standard(NodeId mu, NodeId logvar);

  // KL between two diagonal Gaussians q and p, scalar node.
  NodeId kl_gaussian(NodeId mu_q, NodeId logvar_q, NodeId mu_p, NodeId logvar_p);

  // Custom scalar node: callers supply the value and a closure that maps the
  // incoming scalar gradient to gradient contributions on the inputs.  Used
  // by the soft-DTW reconstruction loss.
  NodeId custom_scalar(double value, std::vector<NodeId> inputs,
                       std::function<void(Graph&, double, const std::vector<NodeId>&)> backward);

  // -- access ----------------------------------------------------------

  const Tensor4& value(NodeId id) const { return nodes_[id].value; }
  const Tensor4& gradient(NodeId id) const { return nodes_[id].grad; }
  Tensor4& gradient_mut(NodeId id) { return nodes_[id].grad; }
  std::size_t node_count() const { return nodes_.size(); }

  // Seeds the root (which must be scalar) with gradient 1 and sweeps the
  // tape in reverse creation order.
  void backward(NodeId root);

 private:
  struct Node {
    Tensor4 value;
    Tensor4 grad;
    std::function<void(Graph&)> backprop;  // empty for leaves
  };

  NodeId push(Tensor4 value, std::function<void(Graph&)> backprop);

  std::vector<Node> nodes_;
  NodeId current_ = -1;  // node whose backprop is running, set by backward()
};

// Output shape of a stride-1 grouped convolution under the given padding.
Shape4 conv_output_shape(const Shape4& in, const Shape4& kernel, int groups, Pad pad);

}  // namespace hvts::grad
