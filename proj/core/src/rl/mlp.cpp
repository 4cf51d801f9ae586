#include "crossinstruct/rl/mlp.hpp"

#include <bit>
#include <cmath>
#include <cstring>

#include "crossinstruct/error.hpp"
#include "crossinstruct/image.hpp"

namespace crossinstruct::rl {

Mlp::Mlp(std::vector<int> dims, Output output, double output_scale)
    : dims_(std::move(dims)), output_(output), output_scale_(output_scale) {
  if (dims_.size() < 2) fail(ErrorKind::kValidation, "network needs at least input and output dims", "dims");
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
    if (dims_[l] <= 0 || dims_[l + 1] <= 0) fail(ErrorKind::kValidation, "layer dims must be positive", "dims");
    offsets_.push_back(n);
    n += static_cast<std::size_t>(dims_[l + 1]) * (dims_[l] + 1);
  }
  if (!(output_scale_ > 0)) fail(ErrorKind::kValidation, "output scale must be positive", "output_scale");
  params_ = VectorXd::Zero(static_cast<Eigen::Index>(n));
}

void Mlp::init(Rng& rng) {
  for (std::size_t l = 0; l < layers(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(dims_[l]));
    const std::size_t count = static_cast<std::size_t>(dims_[l + 1]) * (dims_[l] + 1);
    for (std::size_t i = 0; i < count; ++i) params_[static_cast<Eigen::Index>(offsets_[l] + i)] = rng.uniform(-bound, bound);
  }
}

MatrixXd Mlp::forward(const MatrixXd& x, Cache* cache) const {
  if (x.rows() != input_dim()) fail(ErrorKind::kInvalidInput, "input has wrong dimension", "x");
  if (cache) {
    cache->h.clear();
    cache->h.push_back(x);
  }
  MatrixXd h = x;
  for (std::size_t l = 0; l < layers(); ++l) {
    const int in = dims_[l], out = dims_[l + 1];
    Eigen::Map<const MatrixXd> w(params_.data() + offsets_[l], out, in);
    Eigen::Map<const VectorXd> b(params_.data() + offsets_[l] + static_cast<std::size_t>(out) * in, out);
    MatrixXd z = w * h;
    z.colwise() += b;
    if (l + 1 < layers()) {
      h = z.array().tanh().matrix();
    } else if (output_ == Output::kScaledTanh) {
      h = output_scale_ * z.array().tanh().matrix();
    } else {
      h = std::move(z);
    }
    if (cache) cache->h.push_back(h);
  }
  return h;
}

VectorXd Mlp::forward_one(const VectorXd& x) const { return forward(MatrixXd(x)).col(0); }

MatrixXd Mlp::backward(const Cache& cache, const MatrixXd& d_out, VectorXd* grad) const {
  if (cache.h.size() != layers() + 1) fail(ErrorKind::kInvalidInput, "cache does not match network", "cache");
  if (grad && grad->size() != params_.size()) *grad = VectorXd::Zero(params_.size());
  MatrixXd delta = d_out;
  for (std::size_t l = layers(); l-- > 0;) {
    const int in = dims_[l], out = dims_[l + 1];
    const MatrixXd& y = cache.h[l + 1];
    if (l + 1 < layers()) {
      delta.array() *= 1.0 - y.array().square();
    } else if (output_ == Output::kScaledTanh) {
      delta.array() *= output_scale_ * (1.0 - (y.array() / output_scale_).square());
    }
    if (grad) {
      Eigen::Map<MatrixXd> gw(grad->data() + offsets_[l], out, in);
      Eigen::Map<VectorXd> gb(grad->data() + offsets_[l] + static_cast<std::size_t>(out) * in, out);
      gw.noalias() += delta * cache.h[l].transpose();
      gb += delta.rowwise().sum();
    }
    Eigen::Map<const MatrixXd> w(params_.data() + offsets_[l], out, in);
    delta = w.transpose() * delta;
  }
  return delta;
}

bool Mlp::operator==(const Mlp& other) const {
  return dims_ == other.dims_ && output_ == other.output_ && output_scale_ == other.output_scale_ &&
         params_.size() == other.params_.size() && params_ == other.params_;
}

void polyak_update(Mlp& target, const Mlp& source, double tau) {
  if (target.num_params() != source.num_params()) fail(ErrorKind::kInvalidInput, "network shapes differ", "target");
  target.params() = tau * source.params() + (1.0 - tau) * target.params();
}

Adam::Adam(std::size_t n, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(VectorXd::Zero(static_cast<Eigen::Index>(n))),
      v_(VectorXd::Zero(static_cast<Eigen::Index>(n))) {}

void Adam::step(VectorXd& params, const VectorXd& grad) {
  if (m_.size() != params.size()) {
    m_ = VectorXd::Zero(params.size());
    v_ = VectorXd::Zero(params.size());
  }
  ++t_;
  m_ = beta1_ * m_ + (1 - beta1_) * grad;
  v_ = beta2_ * v_ + (1 - beta2_) * grad.cwiseProduct(grad);
  const double c1 = 1 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1 - std::pow(beta2_, static_cast<double>(t_));
  params.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
}

namespace {

template <typename T>
void put_le(std::string& out, T value) {
  std::uint64_t bits = 0;
  if constexpr (std::is_same_v<T, double>) {
    bits = std::bit_cast<std::uint64_t>(value);
  } else {
    bits = static_cast<std::uint64_t>(value);
  }
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(std::string_view bytes, std::size_t& pos) {
  if (pos + sizeof(T) > bytes.size()) fail(ErrorKind::kParse, "checkpoint truncated at byte " + std::to_string(pos));
  std::uint64_t bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
  }
  pos += sizeof(T);
  if constexpr (std::is_same_v<T, double>) {
    return std::bit_cast<double>(bits);
  } else {
    return static_cast<T>(bits);
  }
}

}  // namespace

std::string serialize_checkpoint(const Mlp& net) {
  std::string out = "CIWT";
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(net.dims().size()));
  for (int d : net.dims()) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  put_le<std::uint32_t>(out, net.output() == Mlp::Output::kScaledTanh ? 1u : 0u);
  put_le<double>(out, net.output_scale());
  put_le<std::uint64_t>(out, net.num_params());
  for (Eigen::Index i = 0; i < net.params().size(); ++i) put_le<double>(out, net.params()[i]);
  return out;
}

Mlp parse_checkpoint(std::string_view bytes) {
  if (bytes.substr(0, 4) != "CIWT") fail(ErrorKind::kParse, "not a checkpoint (bad magic)");
  std::size_t pos = 4;
  const auto version = get_le<std::uint32_t>(bytes, pos);
  if (version != kCheckpointVersion) fail(ErrorKind::kParse, "unsupported checkpoint version " + std::to_string(version));
  const auto n_dims = get_le<std::uint32_t>(bytes, pos);
  if (n_dims < 2 || n_dims > 64) fail(ErrorKind::kParse, "bad layer count in checkpoint");
  std::vector<int> dims;
  for (std::uint32_t i = 0; i < n_dims; ++i) dims.push_back(static_cast<int>(get_le<std::uint32_t>(bytes, pos)));
  const auto kind = get_le<std::uint32_t>(bytes, pos);
  if (kind > 1) fail(ErrorKind::kParse, "bad output kind in checkpoint");
  const double scale = get_le<double>(bytes, pos);
  Mlp net;
  try {
    net = Mlp(dims, kind == 1 ? Mlp::Output::kScaledTanh : Mlp::Output::kLinear, scale);
  } catch (const Error& e) {
    fail(ErrorKind::kParse, "bad checkpoint header: " + e.detail());
  }
  const auto n = get_le<std::uint64_t>(bytes, pos);
  if (n != net.num_params()) fail(ErrorKind::kParse, "parameter count does not match layer dims");
  for (std::uint64_t i = 0; i < n; ++i) net.params()[static_cast<Eigen::Index>(i)] = get_le<double>(bytes, pos);
  if (pos != bytes.size()) fail(ErrorKind::kParse, "trailing bytes after checkpoint");
  return net;
}

void save_checkpoint(const std::filesystem::path& path, const Mlp& net) { write_file(path, serialize_checkpoint(net)); }

Mlp load_checkpoint(const std::filesystem::path& path) { return parse_checkpoint(read_file_text(path)); }

}  // namespace crossinstruct::rl
