#include "rtbm/tnn.hpp"

#include <cctype>
#include <cmath>
#include <memory>
#include <string>

#include "rtbm/riemann_theta.hpp"
#include "rtbm/rng.hpp"

namespace rtbm {
namespace {

using theta::DerivIndex;
using theta::DerivativeSpec;
using theta::ThetaBasis;
using theta::ThetaResult;

constexpr double kMinEig = 1e-12;

ThetaResult eval_phased(const ThetaBasis& basis, Phase phase,
                        const Eigen::Ref<const Vector>& y,
                        const DerivativeSpec& spec) {
  return phase == Phase::I ? basis.eval_real(y, spec) : basis.eval_imag(y, spec);
}

// Output mapping E = -Re(unit * d log theta~): phase I keeps -Re, phase II
// rotates the purely imaginary value onto the real axis (Im).
double expect_map(Phase phase, Complex r1) {
  return phase == Phase::I ? -r1.real() : r1.imag();
}

// d E_i / d z_j = -Re(unit^2 H_ji) with H = R2 - R1 R1^T: the stored real
// argument carries one extra unit factor in phase II.
double kappa_map(Phase phase, Complex h) {
  return phase == Phase::I ? -h.real() : h.real();
}

// d E_i / d q_jk (paired move, before the (1+delta)^{-1} factor):
// Re(unit * (R3_jki - R2_jk R1_i)); q itself is real in both phases.
double rho_map(Phase phase, Complex g) {
  return phase == Phase::I ? g.real() : -g.imag();
}

// Per-parameter-set cache: one 1-D basis per node in the diagonal case, a
// single general basis otherwise.
struct ThetaEval {
  const ThetaLayer* layer;
  std::vector<ThetaBasis> bases;
};

ThetaEval make_theta_eval(const ThetaLayer& layer) {
  ThetaEval eval{&layer, {}};
  if (layer.diagonal_q) {
    eval.bases.reserve(static_cast<std::size_t>(layer.out_dim()));
    for (Index i = 0; i < layer.out_dim(); ++i) {
      Matrix q1(1, 1);
      q1(0, 0) = layer.q(i, i);
      eval.bases.emplace_back(q1);
    }
  } else {
    eval.bases.emplace_back(layer.q);
  }
  return eval;
}

Vector theta_forward(const ThetaEval& eval, const Eigen::Ref<const Vector>& v) {
  const ThetaLayer& l = *eval.layer;
  const Vector z = l.w.transpose() * v + l.b_h;
  Vector out(l.out_dim());
  if (l.diagonal_q) {
    for (Index i = 0; i < l.out_dim(); ++i) {
      const ThetaResult r =
          eval_phased(eval.bases[static_cast<std::size_t>(i)], l.phase,
                      z.segment(i, 1), DerivativeSpec::gradient(1));
      out(i) = expect_map(l.phase, r.ratio(DerivIndex::d1(0)));
    }
  } else {
    const ThetaResult r =
        eval_phased(eval.bases[0], l.phase, z, DerivativeSpec::gradient(l.out_dim()));
    for (Index i = 0; i < l.out_dim(); ++i)
      out(i) = expect_map(l.phase, r.ratio(DerivIndex::d1(static_cast<int>(i))));
  }
  return out;
}

ThetaLayerGrads theta_backward(const ThetaEval& eval,
                               const Eigen::Ref<const Vector>& v,
                               const Eigen::Ref<const Vector>& upstream) {
  const ThetaLayer& l = *eval.layer;
  const Index g = l.out_dim();
  const Vector z = l.w.transpose() * v + l.b_h;

  ThetaLayerGrads out;
  out.d_w = Matrix::Zero(l.in_dim(), g);
  out.d_b_h = Vector::Zero(g);
  out.d_q = Matrix::Zero(g, g);
  out.d_input = Vector::Zero(l.in_dim());

  if (l.diagonal_q) {
    for (Index i = 0; i < g; ++i) {
      const ThetaResult r =
          eval_phased(eval.bases[static_cast<std::size_t>(i)], l.phase,
                      z.segment(i, 1), DerivativeSpec::up_to_third(1));
      const Complex r1 = r.ratio(DerivIndex::d1(0));
      const Complex r2 = r.ratio(DerivIndex::d2(0, 0));
      const Complex r3 = r.ratio(DerivIndex::d3(0, 0, 0));
      const double kappa = kappa_map(l.phase, r2 - r1 * r1);
      const double u = upstream(i);
      out.d_b_h(i) = u * kappa;
      out.d_w.col(i) = (u * kappa) * v;
      out.d_q(i, i) = u * 0.5 * rho_map(l.phase, r3 - r2 * r1);
      out.d_input += (u * kappa) * l.w.col(i);
    }
    return out;
  }

  const ThetaResult r =
      eval_phased(eval.bases[0], l.phase, z, DerivativeSpec::up_to_third(g));
  ComplexVector r1(g);
  for (Index i = 0; i < g; ++i) r1(i) = r.ratio(DerivIndex::d1(static_cast<int>(i)));
  ComplexMatrix r2(g, g);
  for (Index i = 0; i < g; ++i)
    for (Index j = 0; j <= i; ++j)
      r2(i, j) = r2(j, i) =
          r.ratio(DerivIndex::d2(static_cast<int>(j), static_cast<int>(i)));

  Matrix kappa(g, g);
  for (Index j = 0; j < g; ++j)
    for (Index i = 0; i < g; ++i)
      kappa(j, i) = kappa_map(l.phase, r2(j, i) - r1(j) * r1(i));

  const Vector ku = kappa * upstream;
  out.d_b_h = ku;
  out.d_w = v * ku.transpose();
  out.d_input = l.w * ku;
  for (Index j = 0; j < g; ++j)
    for (Index k = j; k < g; ++k) {
      const double pair_inv = j == k ? 0.5 : 1.0;
      double acc = 0.0;
      for (Index i = 0; i < g; ++i) {
        const Complex rho = r.ratio(DerivIndex::d3(static_cast<int>(j),
                                                   static_cast<int>(k),
                                                   static_cast<int>(i))) -
                            r2(j, k) * r1(i);
        acc += upstream(i) * pair_inv * rho_map(l.phase, rho);
      }
      out.d_q(j, k) = out.d_q(k, j) = acc;
    }
  return out;
}

Vector affine_forward(const AffineLayer& l, const Eigen::Ref<const Vector>& x) {
  Vector u = l.w.transpose() * x + l.b;
  switch (l.activation) {
    case Activation::Linear:
      return u;
    case Activation::Tanh:
      return u.array().tanh();
    case Activation::Sigmoid:
      return (1.0 / (1.0 + (-u.array()).exp())).matrix();
  }
  fail(ErrorCode::InvalidArgument, "unknown activation");
}

struct AffineGrads {
  Matrix d_w;
  Vector d_b;
  Vector d_input;
};

AffineGrads affine_backward(const AffineLayer& l, const Eigen::Ref<const Vector>& x,
                            const Eigen::Ref<const Vector>& upstream) {
  const Vector u = l.w.transpose() * x + l.b;
  Vector gu(u.size());
  switch (l.activation) {
    case Activation::Linear:
      gu = upstream;
      break;
    case Activation::Tanh: {
      const Vector t = u.array().tanh();
      gu = upstream.array() * (1.0 - t.array().square());
      break;
    }
    case Activation::Sigmoid: {
      const Vector s = (1.0 / (1.0 + (-u.array()).exp())).matrix();
      gu = upstream.array() * s.array() * (1.0 - s.array());
      break;
    }
  }
  return {x * gu.transpose(), gu, l.w * gu};
}

Index layer_in(const Layer& layer) {
  return std::holds_alternative<ThetaLayer>(layer)
             ? std::get<ThetaLayer>(layer).in_dim()
             : std::get<AffineLayer>(layer).in_dim();
}

Index layer_out(const Layer& layer) {
  return std::holds_alternative<ThetaLayer>(layer)
             ? std::get<ThetaLayer>(layer).out_dim()
             : std::get<AffineLayer>(layer).out_dim();
}

// Parameter-set cache for a whole network.
struct NetEval {
  const TnnNetwork* net;
  std::vector<std::unique_ptr<ThetaEval>> theta;  // null for affine layers
};

NetEval make_net_eval(const TnnNetwork& net) {
  NetEval eval{&net, {}};
  eval.theta.reserve(net.layers.size());
  for (const Layer& layer : net.layers) {
    if (std::holds_alternative<ThetaLayer>(layer))
      eval.theta.push_back(std::make_unique<ThetaEval>(
          make_theta_eval(std::get<ThetaLayer>(layer))));
    else
      eval.theta.push_back(nullptr);
  }
  return eval;
}

// Forward pass; when trace is given it receives the input of every layer.
Vector net_forward(const NetEval& eval, const Eigen::Ref<const Vector>& v,
                   std::vector<Vector>* trace) {
  Vector x = v;
  for (std::size_t k = 0; k < eval.net->layers.size(); ++k) {
    if (trace != nullptr) trace->push_back(x);
    if (eval.theta[k] != nullptr)
      x = theta_forward(*eval.theta[k], x);
    else
      x = affine_forward(std::get<AffineLayer>(eval.net->layers[k]), x);
  }
  return x;
}

double softmax_loss_and_grad(const Vector& out, const Vector& target,
                             Vector* d_out) {
  const double mx = out.maxCoeff();
  const Vector shifted = out.array() - mx;
  const Vector ex = shifted.array().exp();
  const double lse = std::log(ex.sum());
  const Vector log_p = shifted.array() - lse;
  if (d_out != nullptr) *d_out = ex / ex.sum() - target;
  return -target.dot(log_p);
}

// Mean loss over columns; when flat_grad is non-null, accumulates the flat
// parameter gradient (layer order, W row-major then biases then q part).
double net_cost(const NetEval& eval, const Eigen::Ref<const Matrix>& inputs,
                const Eigen::Ref<const Matrix>& targets, Vector* flat_grad);

void check_dataset(const TnnNetwork& net, const Eigen::Ref<const Matrix>& inputs,
                   const Eigen::Ref<const Matrix>& targets) {
  if (inputs.cols() == 0) fail(ErrorCode::EmptyData, "no samples");
  if (inputs.rows() != net.in_dim() || targets.rows() != net.out_dim() ||
      inputs.cols() != targets.cols())
    fail(ErrorCode::ShapeMismatch, "dataset shapes do not match the network");
  if (!inputs.allFinite() || !targets.allFinite())
    fail(ErrorCode::NonFiniteSample, "dataset contains non-finite entries");
}

Index layer_param_count(const Layer& layer) {
  if (std::holds_alternative<ThetaLayer>(layer)) {
    const ThetaLayer& l = std::get<ThetaLayer>(layer);
    const Index q_part =
        l.diagonal_q ? l.out_dim() : l.out_dim() * (l.out_dim() + 1) / 2;
    return l.in_dim() * l.out_dim() + l.out_dim() + q_part;
  }
  const AffineLayer& l = std::get<AffineLayer>(layer);
  return l.in_dim() * l.out_dim() + l.out_dim();
}

}  // namespace

Index TnnNetwork::in_dim() const {
  return layers.empty() ? 0 : layer_in(layers.front());
}

Index TnnNetwork::out_dim() const {
  return layers.empty() ? 0 : layer_out(layers.back());
}

void validate(const ThetaLayer& layer) {
  if (layer.w.rows() < 1 || layer.w.cols() < 1)
    fail(ErrorCode::DimensionMismatch, "empty theta layer");
  if (layer.b_h.size() != layer.out_dim() || layer.q.rows() != layer.out_dim() ||
      layer.q.cols() != layer.out_dim())
    fail(ErrorCode::ShapeMismatch, "theta layer shapes do not chain");
  if (!layer.w.allFinite() || !layer.b_h.allFinite() || !layer.q.allFinite())
    fail(ErrorCode::NonFiniteInput, "theta layer has non-finite parameters");
  if (!is_symmetric(layer.q, 1e-12))
    fail(ErrorCode::NonSymmetricOmega, "q must be symmetric");
  if (layer.diagonal_q) {
    for (Index i = 0; i < layer.q.rows(); ++i)
      for (Index j = 0; j < layer.q.cols(); ++j)
        if (i != j && layer.q(i, j) != 0.0)
          fail(ErrorCode::InvalidArgument,
               "diagonal_q layer has nonzero off-diagonal entries");
    if (!(layer.q.diagonal().minCoeff() > kMinEig))
      fail(ErrorCode::NonPositiveDefiniteOmega, "q must be positive definite");
  } else if (!(min_eigenvalue(layer.q) > kMinEig)) {
    fail(ErrorCode::NonPositiveDefiniteOmega, "q must be positive definite");
  }
}

void validate(const TnnNetwork& net) {
  if (net.layers.empty()) fail(ErrorCode::InvalidArgument, "network has no layers");
  for (std::size_t k = 0; k < net.layers.size(); ++k) {
    if (std::holds_alternative<ThetaLayer>(net.layers[k])) {
      validate(std::get<ThetaLayer>(net.layers[k]));
    } else {
      const AffineLayer& l = std::get<AffineLayer>(net.layers[k]);
      if (l.b.size() != l.out_dim())
        fail(ErrorCode::ShapeMismatch, "affine layer shapes do not chain");
      if (!l.w.allFinite() || !l.b.allFinite())
        fail(ErrorCode::NonFiniteInput, "affine layer has non-finite parameters");
    }
    if (k + 1 < net.layers.size() &&
        layer_out(net.layers[k]) != layer_in(net.layers[k + 1]))
      fail(ErrorCode::ShapeMismatch, "adjacent layer dimensions do not chain");
  }
}

Vector layer_forward(const ThetaLayer& layer, const Eigen::Ref<const Vector>& v) {
  validate(layer);
  if (v.size() != layer.in_dim())
    fail(ErrorCode::DimensionMismatch, "input has wrong length");
  return theta_forward(make_theta_eval(layer), v);
}

ThetaLayerGrads layer_backward(const ThetaLayer& layer,
                               const Eigen::Ref<const Vector>& v,
                               const Eigen::Ref<const Vector>& upstream) {
  validate(layer);
  if (v.size() != layer.in_dim() || upstream.size() != layer.out_dim())
    fail(ErrorCode::DimensionMismatch, "input or upstream has wrong length");
  return theta_backward(make_theta_eval(layer), v, upstream);
}

Vector network_forward(const TnnNetwork& net, const Eigen::Ref<const Vector>& v) {
  validate(net);
  if (v.size() != net.in_dim())
    fail(ErrorCode::DimensionMismatch, "input has wrong length");
  return net_forward(make_net_eval(net), v, nullptr);
}

Matrix network_forward_batch(const TnnNetwork& net,
                             const Eigen::Ref<const Matrix>& inputs) {
  validate(net);
  if (inputs.rows() != net.in_dim())
    fail(ErrorCode::DimensionMismatch, "inputs have wrong length");
  const NetEval eval = make_net_eval(net);
  Matrix out(net.out_dim(), inputs.cols());
  for (Index c = 0; c < inputs.cols(); ++c)
    out.col(c) = net_forward(eval, inputs.col(c), nullptr);
  return out;
}

namespace {

double net_cost(const NetEval& eval, const Eigen::Ref<const Matrix>& inputs,
                const Eigen::Ref<const Matrix>& targets, Vector* flat_grad) {
  const TnnNetwork& net = *eval.net;
  const Index n = inputs.cols();
  const double inv_n = 1.0 / static_cast<double>(n);

  // Flat offsets per layer, matching flatten().
  std::vector<Index> offsets(net.layers.size() + 1, 0);
  for (std::size_t k = 0; k < net.layers.size(); ++k)
    offsets[k + 1] = offsets[k] + layer_param_count(net.layers[k]);
  if (flat_grad != nullptr) *flat_grad = Vector::Zero(offsets.back());

  double loss = 0.0;
  std::vector<Vector> trace;
  for (Index c = 0; c < n; ++c) {
    trace.clear();
    const Vector out = net_forward(eval, inputs.col(c), &trace);
    Vector d_out;
    if (net.loss == Loss::Mse) {
      const Vector err = out - targets.col(c);
      loss += inv_n * err.squaredNorm();
      if (flat_grad != nullptr) d_out = (2.0 * inv_n) * err;
    } else {
      Vector grad_out;
      const double l = softmax_loss_and_grad(
          out, targets.col(c), flat_grad != nullptr ? &grad_out : nullptr);
      loss += inv_n * l;
      if (flat_grad != nullptr) d_out = inv_n * grad_out;
    }
    if (flat_grad == nullptr) continue;

    // Reverse pass, accumulating into the flat gradient.
    Vector upstream = d_out;
    for (std::size_t k = net.layers.size(); k-- > 0;) {
      const Vector& x = trace[k];
      Index idx = offsets[k];
      if (eval.theta[k] != nullptr) {
        const ThetaLayer& l = std::get<ThetaLayer>(net.layers[k]);
        const ThetaLayerGrads g = theta_backward(*eval.theta[k], x, upstream);
        for (Index i = 0; i < l.in_dim(); ++i)
          for (Index j = 0; j < l.out_dim(); ++j)
            (*flat_grad)(idx++) += g.d_w(i, j);
        for (Index i = 0; i < l.out_dim(); ++i) (*flat_grad)(idx++) += g.d_b_h(i);
        if (l.diagonal_q) {
          for (Index i = 0; i < l.out_dim(); ++i) (*flat_grad)(idx++) += g.d_q(i, i);
        } else {
          for (Index i = 0; i < l.out_dim(); ++i)
            for (Index j = 0; j <= i; ++j) (*flat_grad)(idx++) += g.d_q(i, j);
        }
        upstream = g.d_input;
      } else {
        const AffineLayer& l = std::get<AffineLayer>(net.layers[k]);
        const AffineGrads g = affine_backward(l, x, upstream);
        for (Index i = 0; i < l.in_dim(); ++i)
          for (Index j = 0; j < l.out_dim(); ++j)
            (*flat_grad)(idx++) += g.d_w(i, j);
        for (Index i = 0; i < l.out_dim(); ++i) (*flat_grad)(idx++) += g.d_b(i);
        upstream = g.d_input;
      }
    }
  }
  return loss;
}

}  // namespace

double network_loss(const TnnNetwork& net, const Eigen::Ref<const Matrix>& inputs,
                    const Eigen::Ref<const Matrix>& targets) {
  validate(net);
  check_dataset(net, inputs, targets);
  return net_cost(make_net_eval(net), inputs, targets, nullptr);
}

Index param_count(const TnnNetwork& net) {
  Index total = 0;
  for (const Layer& layer : net.layers) total += layer_param_count(layer);
  return total;
}

Vector flatten(const TnnNetwork& net) {
  Vector x(param_count(net));
  Index idx = 0;
  for (const Layer& layer : net.layers) {
    if (std::holds_alternative<ThetaLayer>(layer)) {
      const ThetaLayer& l = std::get<ThetaLayer>(layer);
      for (Index i = 0; i < l.in_dim(); ++i)
        for (Index j = 0; j < l.out_dim(); ++j) x(idx++) = l.w(i, j);
      for (Index i = 0; i < l.out_dim(); ++i) x(idx++) = l.b_h(i);
      if (l.diagonal_q) {
        for (Index i = 0; i < l.out_dim(); ++i) x(idx++) = l.q(i, i);
      } else {
        for (Index i = 0; i < l.out_dim(); ++i)
          for (Index j = 0; j <= i; ++j) x(idx++) = l.q(i, j);
      }
    } else {
      const AffineLayer& l = std::get<AffineLayer>(layer);
      for (Index i = 0; i < l.in_dim(); ++i)
        for (Index j = 0; j < l.out_dim(); ++j) x(idx++) = l.w(i, j);
      for (Index i = 0; i < l.out_dim(); ++i) x(idx++) = l.b(i);
    }
  }
  return x;
}

void unflatten_into(TnnNetwork& net, const Eigen::Ref<const Vector>& x) {
  if (x.size() != param_count(net))
    fail(ErrorCode::LengthMismatch, "flat vector has wrong length");
  Index idx = 0;
  for (Layer& layer : net.layers) {
    if (std::holds_alternative<ThetaLayer>(layer)) {
      ThetaLayer& l = std::get<ThetaLayer>(layer);
      for (Index i = 0; i < l.in_dim(); ++i)
        for (Index j = 0; j < l.out_dim(); ++j) l.w(i, j) = x(idx++);
      for (Index i = 0; i < l.out_dim(); ++i) l.b_h(i) = x(idx++);
      if (l.diagonal_q) {
        for (Index i = 0; i < l.out_dim(); ++i) l.q(i, i) = x(idx++);
      } else {
        for (Index i = 0; i < l.out_dim(); ++i)
          for (Index j = 0; j <= i; ++j) l.q(i, j) = l.q(j, i) = x(idx++);
      }
    } else {
      AffineLayer& l = std::get<AffineLayer>(layer);
      for (Index i = 0; i < l.in_dim(); ++i)
        for (Index j = 0; j < l.out_dim(); ++j) l.w(i, j) = x(idx++);
      for (Index i = 0; i < l.out_dim(); ++i) l.b(i) = x(idx++);
    }
  }
}

TnnNetwork parse_architecture(const std::string& arch, Phase phase, Loss loss) {
  // Tokens: "in:spec-spec-...:out" where a spec is a positive size with an
  // optional trailing activation letter for affine layers.
  std::vector<std::string> fields;
  std::string cur;
  for (char c : arch) {
    if (c == ':') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(cur);
  if (fields.size() < 2)
    fail(ErrorCode::ParseError, "architecture needs at least in:out");

  std::vector<std::string> specs;
  for (std::size_t f = 1; f < fields.size(); ++f) {
    std::string tok;
    for (char c : fields[f]) {
      if (c == '-') {
        specs.push_back(tok);
        tok.clear();
      } else {
        tok += c;
      }
    }
    specs.push_back(tok);
  }

  const auto parse_size = [&](const std::string& s, char* suffix) -> Index {
    if (s.empty()) fail(ErrorCode::ParseError, "empty size in architecture");
    std::size_t digits = 0;
    while (digits < s.size() && std::isdigit(static_cast<unsigned char>(s[digits])))
      ++digits;
    if (digits == 0) fail(ErrorCode::ParseError, "expected a size in architecture");
    *suffix = '\0';
    if (digits + 1 == s.size()) {
      *suffix = s[digits];
      if (*suffix != 'l' && *suffix != 't' && *suffix != 's')
        fail(ErrorCode::ParseError, "unknown layer suffix in architecture");
    } else if (digits != s.size()) {
      fail(ErrorCode::ParseError, "malformed size in architecture");
    }
    const long v = std::stol(s.substr(0, digits));
    if (v < 1) fail(ErrorCode::ParseError, "layer sizes must be positive");
    return static_cast<Index>(v);
  };

  char suffix = '\0';
  if (!fields[0].empty() &&
      !std::isdigit(static_cast<unsigned char>(fields[0].back())))
    fail(ErrorCode::ParseError, "input size takes no suffix");
  Index prev = parse_size(fields[0], &suffix);

  TnnNetwork net;
  net.loss = loss;
  for (const std::string& s : specs) {
    const Index size = parse_size(s, &suffix);
    if (suffix == '\0') {
      ThetaLayer l;
      l.w = Matrix::Zero(prev, size);
      l.b_h = Vector::Zero(size);
      l.q = Matrix::Identity(size, size);
      l.diagonal_q = true;
      l.phase = phase;
      net.layers.emplace_back(std::move(l));
    } else {
      AffineLayer l;
      l.w = Matrix::Zero(prev, size);
      l.b = Vector::Zero(size);
      l.activation = suffix == 'l'   ? Activation::Linear
                     : suffix == 't' ? Activation::Tanh
                                     : Activation::Sigmoid;
      net.layers.emplace_back(std::move(l));
    }
    prev = size;
  }
  return net;
}

void init_network(TnnNetwork& net, double scale, std::uint64_t seed) {
  if (!(scale > 0.0)) fail(ErrorCode::InvalidArgument, "scale must be positive");
  Rng rng(seed);
  for (Layer& layer : net.layers) {
    if (std::holds_alternative<ThetaLayer>(layer)) {
      ThetaLayer& l = std::get<ThetaLayer>(layer);
      for (Index i = 0; i < l.in_dim(); ++i)
        for (Index j = 0; j < l.out_dim(); ++j) l.w(i, j) = rng.uniform(-scale, scale);
      for (Index i = 0; i < l.out_dim(); ++i) l.b_h(i) = rng.uniform(-scale, scale);
      for (Index i = 0; i < l.out_dim(); ++i) l.q(i, i) = rng.uniform(2.0, 18.0);
      if (!l.diagonal_q) {
        // Small symmetric off-diagonal part keeps q diagonally dominant.
        for (Index i = 0; i < l.out_dim(); ++i)
          for (Index j = 0; j < i; ++j)
            l.q(i, j) = l.q(j, i) = rng.uniform(-0.1, 0.1);
      }
    } else {
      AffineLayer& l = std::get<AffineLayer>(layer);
      for (Index i = 0; i < l.in_dim(); ++i)
        for (Index j = 0; j < l.out_dim(); ++j) l.w(i, j) = rng.uniform(-scale, scale);
      for (Index i = 0; i < l.out_dim(); ++i) l.b(i) = rng.uniform(-scale, scale);
    }
  }
}

std::pair<TnnNetwork, TrainReport> network_train(
    const TnnNetwork& net, const Eigen::Ref<const Matrix>& inputs,
    const Eigen::Ref<const Matrix>& targets, const TrainConfig& config) {
  validate(net);
  check_dataset(net, inputs, targets);

  TnnNetwork feas_scratch = net;
  const auto feasible = [&](const Vector& x) {
    unflatten_into(feas_scratch, x);
    for (const Layer& layer : feas_scratch.layers) {
      if (!std::holds_alternative<ThetaLayer>(layer)) continue;
      const ThetaLayer& l = std::get<ThetaLayer>(layer);
      if (l.diagonal_q) {
        if (!(l.q.diagonal().minCoeff() > kMinEig)) return false;
      } else if (!(min_eigenvalue(l.q) > kMinEig)) {
        return false;
      }
    }
    return true;
  };

  TnnNetwork cost_scratch = net;
  const auto cost = [&](const Vector& x, Vector* grad) {
    unflatten_into(cost_scratch, x);
    return net_cost(make_net_eval(cost_scratch), inputs, targets, grad);
  };

  auto [best_x, report] = minimize_flat(cost, feasible, flatten(net), config);
  TnnNetwork out = net;
  unflatten_into(out, best_x);
  return {std::move(out), std::move(report)};
}

namespace {

double sigmoid(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

}  // namespace

LogisticModel logistic_fit(const Eigen::Ref<const Matrix>& features,
                           const std::vector<int>& labels, double ridge) {
  const Index d = features.rows();
  const Index n = features.cols();
  if (n == 0) fail(ErrorCode::EmptyData, "no samples");
  if (static_cast<Index>(labels.size()) != n)
    fail(ErrorCode::LengthMismatch, "one label per sample required");
  for (int y : labels)
    if (y != 0 && y != 1) fail(ErrorCode::InvalidArgument, "labels must be 0 or 1");
  if (!features.allFinite())
    fail(ErrorCode::NonFiniteSample, "features contain non-finite entries");
  if (!(ridge >= 0.0)) fail(ErrorCode::InvalidArgument, "ridge must be nonnegative");

  // Newton iteration on the ridge-regularized log-loss (bias unpenalized).
  Vector beta = Vector::Zero(d + 1);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (int iter = 0; iter < 100; ++iter) {
    Vector grad = Vector::Zero(d + 1);
    Matrix hess = Matrix::Zero(d + 1, d + 1);
    for (Index c = 0; c < n; ++c) {
      Vector f(d + 1);
      f.head(d) = features.col(c);
      f(d) = 1.0;
      const double p = sigmoid(beta.dot(f));
      grad += inv_n * (p - static_cast<double>(labels[static_cast<std::size_t>(c)])) * f;
      hess += inv_n * p * (1.0 - p) * f * f.transpose();
    }
    grad.head(d) += ridge * beta.head(d);
    hess.topLeftCorner(d, d) += ridge * Matrix::Identity(d, d);
    hess.diagonal().array() += 1e-12;
    const Vector delta = hess.ldlt().solve(grad);
    beta -= delta;
    if (delta.cwiseAbs().maxCoeff() < 1e-10) break;
  }

  LogisticModel model;
  model.w = beta.head(d);
  model.b = beta(d);
  return model;
}

double logistic_predict(const LogisticModel& model,
                        const Eigen::Ref<const Vector>& features) {
  if (features.size() != model.w.size())
    fail(ErrorCode::DimensionMismatch, "feature vector has wrong length");
  return sigmoid(model.w.dot(features) + model.b);
}

Index FeaturePipeline::feature_dim() const {
  Index total = 0;
  for (const RtbmParams& m : models) total += m.n_h();
  return total;
}

Index FeaturePipeline::input_dim() const {
  return patches.empty() ? 0 : patches.back().first + patches.back().second;
}

FeaturePipeline feature_classifier_fit(const std::vector<Matrix>& patch_data,
                                       const std::vector<int>& labels, Index n_h,
                                       const TrainConfig& config, Phase phase) {
  if (patch_data.empty()) fail(ErrorCode::EmptyData, "no patches");
  if (n_h < 1) fail(ErrorCode::InvalidArgument, "need at least one hidden unit");
  const Index n = patch_data.front().cols();
  if (n == 0) fail(ErrorCode::EmptyData, "no samples");
  if (static_cast<Index>(labels.size()) != n)
    fail(ErrorCode::LengthMismatch, "one label per sample required");
  for (std::size_t p = 0; p < patch_data.size(); ++p) {
    const Matrix& data = patch_data[p];
    if (data.cols() != n)
      fail(ErrorCode::ShapeMismatch, "patch datasets must be sample-aligned");
    if (data.rows() < 1) fail(ErrorCode::ShapeMismatch, "empty patch");
    if (!data.allFinite())
      fail(ErrorCode::NonFiniteSample, "patch contains non-finite entries");
    for (Index i = 0; i < data.rows(); ++i)
      if (data.row(i).maxCoeff() - data.row(i).minCoeff() < 1e-12)
        fail(ErrorCode::DegenerateData, "patch feature has zero variance");
  }

  FeaturePipeline pipeline;
  Index offset = 0;
  for (std::size_t p = 0; p < patch_data.size(); ++p) {
    const Index width = patch_data[p].rows();
    pipeline.patches.emplace_back(offset, width);
    offset += width;
    RtbmParams init = init_random(width, n_h, config.init_scale,
                                  config.seed + static_cast<std::uint64_t>(p));
    init.phase = phase;
    pipeline.models.push_back(train_ml(init, patch_data[p], config).first);
  }

  Matrix features(pipeline.feature_dim(), n);
  Index row = 0;
  for (std::size_t p = 0; p < patch_data.size(); ++p) {
    const RtbmEvaluator ev(pipeline.models[p]);
    for (Index c = 0; c < n; ++c)
      features.block(row, c, n_h, 1) = ev.expectation(patch_data[p].col(c));
    row += n_h;
  }
  pipeline.classifier = logistic_fit(features, labels, 1e-4);
  return pipeline;
}

Vector pipeline_features(const FeaturePipeline& pipeline,
                         const Eigen::Ref<const Vector>& input) {
  if (pipeline.models.size() != pipeline.patches.size() || pipeline.models.empty())
    fail(ErrorCode::InvalidArgument, "pipeline is incomplete");
  if (input.size() != pipeline.input_dim())
    fail(ErrorCode::DimensionMismatch, "input has wrong length");
  Vector features(pipeline.feature_dim());
  Index row = 0;
  for (std::size_t p = 0; p < pipeline.models.size(); ++p) {
    const auto [offset, width] = pipeline.patches[p];
    const Vector e = expectation(pipeline.models[p], input.segment(offset, width));
    features.segment(row, e.size()) = e;
    row += e.size();
  }
  return features;
}

double pipeline_predict(const FeaturePipeline& pipeline,
                        const Eigen::Ref<const Vector>& input) {
  return logistic_predict(pipeline.classifier, pipeline_features(pipeline, input));
}

}  // namespace rtbm
