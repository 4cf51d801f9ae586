#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "crossinstruct/rng.hpp"

namespace crossinstruct::rl {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Fully connected tanh network stored as one flat parameter vector. Layer l
// contributes W_l (column-major, out x in) followed by b_l. Batched inputs
// are matrices with one sample per column.
class Mlp {
 public:
  enum class Output { kLinear, kScaledTanh };

  struct Cache {
    // h[0] is the input, h[l] the activation after layer l.
    std::vector<MatrixXd> h;
  };

  Mlp() = default;
  Mlp(std::vector<int> dims, Output output = Output::kLinear, double output_scale = 1.0);

  const std::vector<int>& dims() const { return dims_; }
  Output output() const { return output_; }
  double output_scale() const { return output_scale_; }
  int input_dim() const { return dims_.front(); }
  int output_dim() const { return dims_.back(); }
  std::size_t layers() const { return dims_.size() - 1; }
  std::size_t num_params() const { return static_cast<std::size_t>(params_.size()); }

  VectorXd& params() { return params_; }
  const VectorXd& params() const { return params_; }

  // U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
  void init(Rng& rng);

  MatrixXd forward(const MatrixXd& x, Cache* cache = nullptr) const;
  VectorXd forward_one(const VectorXd& x) const;
  // Backpropagates d_out through a cached forward pass. Parameter gradients
  // are added into *grad when given. Returns the gradient w.r.t. the input.
  MatrixXd backward(const Cache& cache, const MatrixXd& d_out, VectorXd* grad) const;

  bool all_finite() const { return params_.allFinite(); }
  bool operator==(const Mlp& other) const;

 private:
  std::vector<int> dims_;
  Output output_ = Output::kLinear;
  double output_scale_ = 1.0;
  std::vector<std::size_t> offsets_;
  VectorXd params_;
};

// Polyak averaging: target <- tau * source + (1 - tau) * target.
void polyak_update(Mlp& target, const Mlp& source, double tau);

class Adam {
 public:
  explicit Adam(std::size_t n = 0, double lr = 3e-4, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(VectorXd& params, const VectorXd& grad);
  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

 private:
  double lr_, beta1_, beta2_, eps_;
  VectorXd m_, v_;
  std::int64_t t_ = 0;
};

// Versioned binary checkpoint: "CIWT", u32 version, u32 layer count, u32
// dims, u32 output kind, f64 output scale, u64 parameter count, f64 params.
// Integers and doubles are little-endian.
inline constexpr std::uint32_t kCheckpointVersion = 1;
std::string serialize_checkpoint(const Mlp& net);
Mlp parse_checkpoint(std::string_view bytes);
void save_checkpoint(const std::filesystem::path& path, const Mlp& net);
Mlp load_checkpoint(const std::filesystem::path& path);

}  // namespace crossinstruct::rl
