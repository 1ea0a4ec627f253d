#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace spoofmeta::tensor {

using Shape = std::vector<std::size_t>;
std::string shape_str(const Shape& s);
std::size_t shape_size(const Shape& s);

/// Dense row-major array of doubles.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);
  static Tensor scalar(double v) { return Tensor({}, std::vector<double>{v}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  /// Value of a one-element tensor.
  double item() const;
  bool all_finite() const;

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

class Tape;

/// Handle to a value recorded on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Tensor& grad() const;
  const Shape& shape() const { return value().shape(); }
};

/// Reverse-mode gradient tape. Nodes are recorded in evaluation order, which is therefore a
/// topological order; `backward` walks it once in reverse. A tape and its values belong to
/// one thread.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

  Var leaf(Tensor value);
  Var constant(Tensor value);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  /// Gradient of the last `backward` loss with respect to `v`; zeros if unreached.
  const Tensor& grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Populate gradients of the scalar `loss`. A second call throws until `zero_grad`.
  void backward(Var loss);
  void zero_grad();

  /// Used by operations. Throws NumericError when `value` holds NaN or Inf.
  Var record(const char* op, Tensor value, std::vector<Var> parents, BackwardFn fn);
  /// Gradient accumulator of `v`, allocated on first use.
  std::span<double> grad_buffer(Var v);

 private:
  struct Node {
    Tensor value;
    mutable Tensor grad;
    std::vector<Var> parents;
    BackwardFn backward;
    bool requires_grad = false;
    mutable bool has_grad = false;
    const char* op = "leaf";
  };
  void check_owned(Var v, const char* op) const;

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

// --- operations ----------------------------------------------------------------------
// Shapes: B batch, C channels, H x W spatial. All ops leave their inputs untouched and throw
// ValidationError naming the op and the offending shapes.

/// x (B, in) . W (in, out) + b (out) -> (B, out)
Var dense(Var x, Var w, Var b);
/// Valid-mode cross-correlation. x (B, C, H, W), k (F, C, kh, kw), b (F) -> (B, F, H', W')
/// with H' = (H - kh) / stride + 1.
Var conv2d(Var x, Var k, Var b, std::size_t stride = 1);
Var relu(Var x);
/// 2x2 max pooling with stride 2 over the last two dims of (B, C, H, W); odd edges dropped.
Var maxpool2(Var x);
/// Mean over all elements -> scalar.
Var mean(Var x);
/// Row-wise concatenation of (B, a) and (B, b) -> (B, a + b).
Var concat(Var x, Var y);
/// Pairwise squared distances between rows: A (n, D), B (m, D) -> (n, m).
Var sq_euclidean_rows(Var a, Var b);
/// Mean cross-entropy of softmax(logits (n, C)) against integer labels.
Var softmax_cross_entropy(Var logits, std::span<const int> labels);
/// (n, k) . (k, m) -> (n, m)
Var matmul(Var a, Var b);
Var reshape(Var x, Shape shape);
Var scale(Var x, double c);
Var add(Var x, Var y);
/// Elementwise product of equal shapes.
Var mul(Var x, Var y);
/// (1, d) -> (n, d)
Var repeat_rows(Var x, std::size_t n);

// --- parameters and optimizers -------------------------------------------------------

using ParamSet = std::map<std::string, Tensor>;

ParamSet zeros_like(const ParamSet& p);
/// Throws ValidationError unless `a` and `b` hold the same names and shapes.
void check_same_layout(const ParamSet& a, const ParamSet& b, const char* what);
/// a + c * b
ParamSet axpy(const ParamSet& a, double c, const ParamSet& b);
double l2_norm(const ParamSet& p);
bool all_finite(const ParamSet& p);

/// Record every tensor of `p` as a leaf.
std::map<std::string, Var> bind(Tape& tape, const ParamSet& p);
/// Read leaf gradients back into a ParamSet.
ParamSet gradients(const Tape& tape, const std::map<std::string, Var>& vars);

/// p - lr * g
ParamSet sgd_step(const ParamSet& params, const ParamSet& grads, double lr);

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  ParamSet m;
  ParamSet v;
};

/// Bias-corrected Adam. The moment buffers are created as zeros on first use.
ParamSet adam_step(AdamState& state, const ParamSet& params, const ParamSet& grads, double lr);

// --- checkpoints ---------------------------------------------------------------------
// "SPL1", then for each tensor: u32 name length, name bytes, u32 rank, rank x u64 dims,
// raw little-endian f64 data; then a u32 CRC32 of everything before it. Integers are
// little-endian.

std::vector<std::uint8_t> encode_checkpoint(const ParamSet& p);
ParamSet decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const std::filesystem::path& path, const ParamSet& p);
ParamSet load_checkpoint(const std::filesystem::path& path);

}  // namespace spoofmeta::tensor
