#include "core/autodiff.hpp"

#include <cmath>

#include <atomic>

namespace hand3r::ad {

Tape::Tape(bool record) : record_(record) {
  static std::atomic<uint64_t> counter{1};
  serial_ = counter.fetch_add(1);
}

namespace {
double gauss(std::mt19937_64& rng) {
  // Box-Muller on explicitly constructed uniforms, identical across platforms.
  double u1 = (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
  double u2 = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}
}  // namespace

Param& ParamStore::create(const std::string& name, int rows, int cols, double init_std,
                          std::mt19937_64& rng) {
  Mat v(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) v(i, j) = init_std * gauss(rng);
  return add(name, std::move(v));
}

Param& ParamStore::add(const std::string& name, Mat value) {
  if (by_name_.count(name)) throw InvalidInputError("duplicate parameter name: " + name);
  auto p = std::make_unique<Param>();
  p->name = name;
  p->value = std::move(value);
  p->grad = Mat::Zero(p->value.rows(), p->value.cols());
  params_.push_back(std::move(p));
  by_name_[name] = params_.back().get();
  return *params_.back();
}

Param* ParamStore::find(const std::string& name) {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? nullptr : it->second;
}
const Param* ParamStore::find(const std::string& name) const {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? nullptr : it->second;
}

std::vector<Param*> ParamStore::all() {
  std::vector<Param*> out;
  for (auto& p : params_) out.push_back(p.get());
  return out;
}
std::vector<const Param*> ParamStore::all() const {
  std::vector<const Param*> out;
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<Param*> ParamStore::group(const std::string& prefix) {
  std::vector<Param*> out;
  for (auto& p : params_)
    if (p->name.rfind(prefix, 0) == 0) out.push_back(p.get());
  return out;
}

void ParamStore::zero_grads() {
  for (auto& p : params_) p->grad.setZero();
}

void Adam::step(std::vector<Param*>& params) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
  for (Param* p : params) {
    if (!p->trainable) continue;
    if (p->m.size() == 0) {
      p->m = Mat::Zero(p->value.rows(), p->value.cols());
      p->v = Mat::Zero(p->value.rows(), p->value.cols());
    }
    p->m = cfg_.beta1 * p->m + (1.0 - cfg_.beta1) * p->grad;
    p->v = cfg_.beta2 * p->v + (1.0 - cfg_.beta2) * p->grad.cwiseProduct(p->grad);
    const Mat mhat = p->m / bc1;
    const Mat vhat = p->v / bc2;
    const Mat denom = vhat.cwiseSqrt() + Mat::Constant(vhat.rows(), vhat.cols(), cfg_.eps);
    p->value -= (cfg_.lr * p->lr_scale) * mhat.cwiseQuotient(denom);
  }
}

Tape::Id Tape::push(Mat value, bool needs_grad, std::function<void(Tape&, const Mat&)> back) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = record_ && needs_grad;
  if (n.needs_grad) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return static_cast<Id>(nodes_.size()) - 1;
}

Mat& Tape::grad(Id id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

Tape::Id Tape::input(Mat v, bool needs_grad) { return push(std::move(v), needs_grad, nullptr); }

Tape::Id Tape::param(Param& p) {
  Id id = push(p.value, p.trainable, nullptr);
  if (record_) param_nodes_.emplace_back(id, &p);
  return id;
}

Tape::Id Tape::custom(Mat value, bool needs_grad, std::function<void(Tape&, const Mat&)> back) {
  return push(std::move(value), needs_grad, std::move(back));
}

Tape::Id Tape::add(Id a, Id b) {
  return push(val(a) + val(b), needs_grad(a) || needs_grad(b), [a, b](Tape& t, const Mat& g) {
    if (t.needs_grad(a)) t.grad(a) += g;
    if (t.needs_grad(b)) t.grad(b) += g;
  });
}

Tape::Id Tape::sub(Id a, Id b) {
  return push(val(a) - val(b), needs_grad(a) || needs_grad(b), [a, b](Tape& t, const Mat& g) {
    if (t.needs_grad(a)) t.grad(a) += g;
    if (t.needs_grad(b)) t.grad(b) -= g;
  });
}

Tape::Id Tape::mul(Id a, Id b) {
  return push(val(a).cwiseProduct(val(b)), needs_grad(a) || needs_grad(b),
              [a, b](Tape& t, const Mat& g) {
                if (t.needs_grad(a)) t.grad(a) += g.cwiseProduct(t.val(b));
                if (t.needs_grad(b)) t.grad(b) += g.cwiseProduct(t.val(a));
              });
}

Tape::Id Tape::mul_const(Id a, const Mat& c) {
  return push(val(a).cwiseProduct(c), needs_grad(a), [a, c](Tape& t, const Mat& g) {
    if (t.needs_grad(a)) t.grad(a) += g.cwiseProduct(c);
  });
}

Tape::Id Tape::scale(Id a, double c) {
  return push(val(a) * c, needs_grad(a), [a, c](Tape& t, const Mat& g) {
    if (t.needs_grad(a)) t.grad(a) += g * c;
  });
}

Tape::Id Tape::matmul(Id a, Id b) {
  return push(val(a) * val(b), needs_grad(a) || needs_grad(b), [a, b](Tape& t, const Mat& g) {
    if (t.needs_grad(a)) t.grad(a) += g * t.val(b).transpose();
    if (t.needs_grad(b)) t.grad(b) += t.val(a).transpose() * g;
  });
}

Tape::Id Tape::transpose(Id a) {
  return push(val(a).transpose(), needs_grad(a), [a](Tape& t, const Mat& g) {
    if (t.needs_grad(a)) t.grad(a) += g.transpose();
  });
}

Tape::Id Tape::add_row_broadcast(Id x, Id row) {
  Mat v = val(x);
  v.rowwise() += Eigen::RowVectorXd(val(row).row(0));
  return push(std::move(v), needs_grad(x) || needs_grad(row), [x, row](Tape& t, const Mat& g) {
    if (t.needs_grad(x)) t.grad(x) += g;
    if (t.needs_grad(row)) t.grad(row) += g.colwise().sum();
  });
}

Tape::Id Tape::layernorm(Id x, Id gain, Id bias) {
  const Mat& X = val(x);
  const double eps = 1e-6;
  const int C = static_cast<int>(X.cols());
  Mat xhat(X.rows(), C);
  Vec inv_sigma(X.rows());
  for (int r = 0; r < X.rows(); ++r) {
    const double mu = X.row(r).mean();
    const double var = (X.row(r).array() - mu).square().mean();
    inv_sigma(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (X.row(r).array() - mu) * inv_sigma(r);
  }
  Mat y = xhat;
  for (int r = 0; r < y.rows(); ++r)
    y.row(r) = y.row(r).cwiseProduct(val(gain).row(0)) + val(bias).row(0);
  const bool ng = needs_grad(x) || needs_grad(gain) || needs_grad(bias);
  return push(std::move(y), ng, [x, gain, bias, xhat, inv_sigma](Tape& t, const Mat& g) {
    if (t.needs_grad(gain)) t.grad(gain) += (g.cwiseProduct(xhat)).colwise().sum();
    if (t.needs_grad(bias)) t.grad(bias) += g.colwise().sum();
    if (t.needs_grad(x)) {
      Mat& gx = t.grad(x);
      const Mat& gn = t.val(gain);
      for (int r = 0; r < g.rows(); ++r) {
        Eigen::RowVectorXd h = g.row(r).cwiseProduct(gn.row(0));
        const double mh = h.mean();
        const double mhx = h.cwiseProduct(xhat.row(r)).mean();
        gx.row(r) += (h.array() - mh - xhat.row(r).array() * mhx).matrix() * inv_sigma(r);
      }
    }
  });
}

Tape::Id Tape::softmax_rows(Id x) {
  const Mat& X = val(x);
  Mat y(X.rows(), X.cols());
  for (int r = 0; r < X.rows(); ++r) {
    const double m = X.row(r).maxCoeff();
    Eigen::RowVectorXd e = (X.row(r).array() - m).exp();
    y.row(r) = e / e.sum();
  }
  return push(y, needs_grad(x), [x, y](Tape& t, const Mat& g) {
    if (!t.needs_grad(x)) return;
    Mat& gx = t.grad(x);
    for (int r = 0; r < g.rows(); ++r) {
      const double dot = g.row(r).dot(y.row(r));
      gx.row(r) += y.row(r).cwiseProduct(((g.row(r).array() - dot).matrix()));
    }
  });
}

Tape::Id Tape::gelu(Id x) {
  const Mat& X = val(x);
  const Mat Y = X.unaryExpr([](double v) { return v * 0.5 * (1.0 + std::erf(v * M_SQRT1_2)); });
  return push(Y, needs_grad(x), [x](Tape& t, const Mat& g) {
    if (!t.needs_grad(x)) return;
    const Mat& X = t.val(x);
    t.grad(x) += g.cwiseProduct(X.unaryExpr([](double v) {
      const double phi = std::exp(-0.5 * v * v) / std::sqrt(2.0 * M_PI);
      return 0.5 * (1.0 + std::erf(v * M_SQRT1_2)) + v * phi;
    }));
  });
}

Tape::Id Tape::softplus(Id x) {
  const Mat& X = val(x);
  const Mat Y = X.unaryExpr([](double v) {
    return v > 30.0 ? v : std::log1p(std::exp(v));
  });
  return push(Y, needs_grad(x), [x](Tape& t, const Mat& g) {
    if (!t.needs_grad(x)) return;
    const Mat& X = t.val(x);
    t.grad(x) += g.cwiseProduct(X.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); }));
  });
}

Tape::Id Tape::reciprocal(Id x) {
  const Mat Y = val(x).cwiseInverse();
  return push(Y, needs_grad(x), [x, Y](Tape& t, const Mat& g) {
    if (t.needs_grad(x)) t.grad(x) -= g.cwiseProduct(Y.cwiseProduct(Y));
  });
}

Tape::Id Tape::log(Id x) {
  const Mat Y = val(x).unaryExpr([](double v) { return std::log(v); });
  return push(Y, needs_grad(x), [x](Tape& t, const Mat& g) {
    if (t.needs_grad(x)) t.grad(x) += g.cwiseQuotient(t.val(x));
  });
}

Tape::Id Tape::add_const(Id x, double c) {
  return push(val(x).array() + c, needs_grad(x), [x](Tape& t, const Mat& g) {
    if (t.needs_grad(x)) t.grad(x) += g;
  });
}

Tape::Id Tape::clamp_min(Id x, double lo) {
  const Mat Y = val(x).cwiseMax(lo);
  return push(Y, needs_grad(x), [x, lo](Tape& t, const Mat& g) {
    if (!t.needs_grad(x)) return;
    const Mat& X = t.val(x);
    t.grad(x) += g.cwiseProduct(
        X.unaryExpr([lo](double v) { return v > lo ? 1.0 : 0.0; }));
  });
}

Tape::Id Tape::square(Id x) {
  return push(val(x).cwiseProduct(val(x)), needs_grad(x), [x](Tape& t, const Mat& g) {
    if (t.needs_grad(x)) t.grad(x) += 2.0 * g.cwiseProduct(t.val(x));
  });
}

Tape::Id Tape::slice_rows(Id x, int start, int n) {
  return push(val(x).middleRows(start, n), needs_grad(x), [x, start, n](Tape& t, const Mat& g) {
    if (t.needs_grad(x)) t.grad(x).middleRows(start, n) += g;
  });
}

Tape::Id Tape::slice_cols(Id x, int start, int n) {
  return push(val(x).middleCols(start, n), needs_grad(x), [x, start, n](Tape& t, const Mat& g) {
    if (t.needs_grad(x)) t.grad(x).middleCols(start, n) += g;
  });
}

Tape::Id Tape::concat_rows(const std::vector<Id>& parts) {
  Eigen::Index rows = 0;
  const Eigen::Index cols = val(parts[0]).cols();
  bool ng = false;
  for (Id p : parts) {
    rows += val(p).rows();
    ng = ng || needs_grad(p);
  }
  Mat v(rows, cols);
  Eigen::Index at = 0;
  for (Id p : parts) {
    v.middleRows(at, val(p).rows()) = val(p);
    at += val(p).rows();
  }
  return push(std::move(v), ng, [parts](Tape& t, const Mat& g) {
    Eigen::Index at = 0;
    for (Id p : parts) {
      const Eigen::Index r = t.val(p).rows();
      if (t.needs_grad(p)) t.grad(p) += g.middleRows(at, r);
      at += r;
    }
  });
}

Tape::Id Tape::concat_cols(const std::vector<Id>& parts) {
  Eigen::Index cols = 0;
  const Eigen::Index rows = val(parts[0]).rows();
  bool ng = false;
  for (Id p : parts) {
    cols += val(p).cols();
    ng = ng || needs_grad(p);
  }
  Mat v(rows, cols);
  Eigen::Index at = 0;
  for (Id p : parts) {
    v.middleCols(at, val(p).cols()) = val(p);
    at += val(p).cols();
  }
  return push(std::move(v), ng, [parts](Tape& t, const Mat& g) {
    Eigen::Index at = 0;
    for (Id p : parts) {
      const Eigen::Index c = t.val(p).cols();
      if (t.needs_grad(p)) t.grad(p) += g.middleCols(at, c);
      at += c;
    }
  });
}

Tape::Id Tape::gather_rows(Id x, std::vector<int> idx) {
  Mat v(static_cast<Eigen::Index>(idx.size()), val(x).cols());
  for (size_t i = 0; i < idx.size(); ++i) v.row(i) = val(x).row(idx[i]);
  return push(std::move(v), needs_grad(x), [x, idx = std::move(idx)](Tape& t, const Mat& g) {
    if (!t.needs_grad(x)) return;
    Mat& gx = t.grad(x);
    for (size_t i = 0; i < idx.size(); ++i) gx.row(idx[i]) += g.row(i);
  });
}

Tape::Id Tape::mean_rows(Id x) {
  Mat v = val(x).colwise().mean();
  const double n = static_cast<double>(val(x).rows());
  return push(std::move(v), needs_grad(x), [x, n](Tape& t, const Mat& g) {
    if (!t.needs_grad(x)) return;
    Mat& gx = t.grad(x);
    for (int r = 0; r < gx.rows(); ++r) gx.row(r) += g.row(0) / n;
  });
}

Tape::Id Tape::sum_all(Id x) {
  Mat v(1, 1);
  v(0, 0) = val(x).sum();
  return push(std::move(v), needs_grad(x), [x](Tape& t, const Mat& g) {
    if (t.needs_grad(x))
      t.grad(x).array() += g(0, 0);
  });
}

Tape::Id Tape::mean_all(Id x) {
  const double n = static_cast<double>(val(x).size());
  Mat v(1, 1);
  v(0, 0) = val(x).sum() / n;
  return push(std::move(v), needs_grad(x), [x, n](Tape& t, const Mat& g) {
    if (t.needs_grad(x)) t.grad(x).array() += g(0, 0) / n;
  });
}

Tape::Id Tape::rot6d_to_matrix(Id six) {
  const Eigen::RowVectorXd v = val(six).row(0);
  const Vec3 a1 = v.segment(0, 3).transpose();
  const Vec3 a2 = v.segment(3, 3).transpose();
  const double n1 = a1.norm();
  const Vec3 b1 = a1 / n1;
  const Vec3 u = a2 - b1.dot(a2) * b1;
  const double nu = u.norm();
  const Vec3 b2 = u / nu;
  const Vec3 b3 = b1.cross(b2);
  Mat3 R;
  R.col(0) = b1;
  R.col(1) = b2;
  R.col(2) = b3;
  return push(Mat(R), needs_grad(six), [six, a1, a2, n1, b1, nu, b2, b3](Tape& t, const Mat& g) {
    if (!t.needs_grad(six)) return;
    Vec3 gb1 = g.col(0);
    Vec3 gb2 = g.col(1);
    const Vec3 gb3 = g.col(2);
    // b3 = b1 x b2
    gb1 += b2.cross(gb3);
    gb2 += gb3.cross(b1);
    // b2 = u / |u|
    const Vec3 gu = (gb2 - gb2.dot(b2) * b2) / nu;
    // u = a2 - (b1 . a2) b1
    Vec3 ga2 = gu - b1.dot(gu) * b1;
    gb1 += -(b1.dot(gu)) * a2 - b1.dot(a2) * gu;
    // b1 = a1 / |a1|
    const Vec3 ga1 = (gb1 - gb1.dot(b1) * b1) / n1;
    Mat& gs = t.grad(six);
    gs.row(0).segment(0, 3) += ga1.transpose();
    gs.row(0).segment(3, 3) += ga2.transpose();
  });
}

Tape::Id Tape::geodesic_sq(Id rot, const Mat3& target) {
  const Mat3 R = val(rot);
  const double tr = (target.transpose() * R).trace();
  const double c = std::clamp((tr - 1.0) / 2.0, -1.0 + 1e-12, 1.0 - 1e-12);
  const double theta = std::acos(c);
  Mat v(1, 1);
  v(0, 0) = theta * theta;
  return push(std::move(v), needs_grad(rot), [rot, target, theta, c](Tape& t, const Mat& g) {
    if (!t.needs_grad(rot)) return;
    // d(theta^2)/dR = -theta/sqrt(1-c^2) * target; factor -> -1 as theta -> 0.
    const double s2 = 1.0 - c * c;
    const double factor = theta < 1e-8 ? -1.0 : -theta / std::sqrt(s2);
    t.grad(rot) += g(0, 0) * factor * Mat(target);
  });
}

void Tape::backward(Id root) {
  if (val(root).rows() != 1 || val(root).cols() != 1) {
    throw InvalidInputError("Tape::backward: root must be scalar");
  }
  if (!record_) throw InvalidInputError("Tape::backward: tape built with record=false");
  grad(root)(0, 0) += 1.0;
  for (Id i = root; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.back && n.grad.size() != 0) n.back(*this, n.grad);
  }
}

void Tape::collect_param_grads() {
  for (auto& [id, p] : param_nodes_) {
    if (!p->trainable) continue;
    if (nodes_[id].grad.size() != 0) p->grad += nodes_[id].grad;
  }
}

}  // namespace hand3r::ad
