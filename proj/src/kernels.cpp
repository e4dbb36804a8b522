#include "gpdm/kernels.hpp"

#include <cmath>
#include <sstream>

#include "gpdm/util.hpp"

namespace gpdm {

int kernel_theta_count(KernelKind kind) {
  switch (kind) {
    case KernelKind::Rbf: return 2;
    case KernelKind::Linear: return 1;
    case KernelKind::Matern32: return 2;
    case KernelKind::Matern52: return 2;
    case KernelKind::RationalQuadratic: return 3;
    case KernelKind::Polynomial: return 2;
  }
  throw std::invalid_argument("unknown kernel kind");
}

std::string kernel_kind_name(KernelKind kind) {
  switch (kind) {
    case KernelKind::Rbf: return "rbf";
    case KernelKind::Linear: return "linear";
    case KernelKind::Matern32: return "matern32";
    case KernelKind::Matern52: return "matern52";
    case KernelKind::RationalQuadratic: return "rq";
    case KernelKind::Polynomial: return "poly";
  }
  throw std::invalid_argument("unknown kernel kind");
}

void KernelSpec::validate() const {
  if (terms.empty()) throw std::invalid_argument("kernel: needs at least one term");
  if (terms.size() > 6) throw std::invalid_argument("kernel: at most six terms");
  for (const auto& t : terms) {
    if (!(t.weight > 0.0))
      throw std::invalid_argument("kernel: non-positive term weight");
    if (static_cast<int>(t.theta.size()) != kernel_theta_count(t.kind))
      throw std::invalid_argument("kernel: wrong hyperparameter count for " +
                                  kernel_kind_name(t.kind));
    for (double h : t.theta)
      if (!(h > 0.0)) throw std::invalid_argument("kernel: non-positive hyperparameter");
    if (t.kind == KernelKind::Polynomial && t.degree < 1)
      throw std::invalid_argument("kernel: polynomial degree must be >= 1");
  }
  if (include_noise && !(noise_precision > 0.0))
    throw std::invalid_argument("kernel: non-positive noise precision");
}

int KernelSpec::hyper_count() const {
  int n = 0;
  for (const auto& t : terms) n += 1 + static_cast<int>(t.theta.size());
  return n + (include_noise ? 1 : 0);
}

std::vector<double> KernelSpec::hyper_values() const {
  std::vector<double> out;
  out.reserve(hyper_count());
  for (const auto& t : terms) {
    out.push_back(t.weight);
    out.insert(out.end(), t.theta.begin(), t.theta.end());
  }
  if (include_noise) out.push_back(noise_precision);
  return out;
}

void KernelSpec::set_hyper_values(const std::vector<double>& values) {
  if (static_cast<int>(values.size()) != hyper_count())
    throw std::invalid_argument("kernel: hyperparameter vector size mismatch");
  size_t i = 0;
  for (auto& t : terms) {
    t.weight = values[i++];
    for (auto& h : t.theta) h = values[i++];
  }
  if (include_noise) noise_precision = values[i++];
}

std::vector<std::string> KernelSpec::hyper_names() const {
  std::vector<std::string> out;
  for (size_t l = 0; l < terms.size(); ++l) {
    std::string base = kernel_kind_name(terms[l].kind) + "[" + std::to_string(l) + "].";
    out.push_back(base + "weight");
    for (size_t j = 0; j < terms[l].theta.size(); ++j)
      out.push_back(base + "theta" + std::to_string(j));
  }
  if (include_noise) out.push_back("noise.precision");
  return out;
}

namespace {

// Unweighted term value from the squared distance and dot product.
double term_value(const KernelTerm& t, double r2, double dot) {
  if (r2 < 0) r2 = 0;  // guards tiny negative rounding from norm expansion
  switch (t.kind) {
    case KernelKind::Rbf:
      return t.theta[0] * std::exp(-0.5 * t.theta[1] * r2);
    case KernelKind::Linear:
      return t.theta[0] * dot;
    case KernelKind::Matern32: {
      double u = std::sqrt(3.0 * t.theta[1] * r2);
      return t.theta[0] * (1.0 + u) * std::exp(-u);
    }
    case KernelKind::Matern52: {
      double u = std::sqrt(5.0 * t.theta[1] * r2);
      return t.theta[0] * (1.0 + u + u * u / 3.0) * std::exp(-u);
    }
    case KernelKind::RationalQuadratic: {
      double z = 1.0 + t.theta[1] * r2 / (2.0 * t.theta[2]);
      return t.theta[0] * std::pow(z, -t.theta[2]);
    }
    case KernelKind::Polynomial:
      return t.theta[0] * std::pow(dot + t.theta[1], t.degree);
  }
  return 0.0;
}

// Unweighted derivatives w.r.t. the term's theta entries.
void term_theta_grads(const KernelTerm& t, double r2, double dot, double* out) {
  if (r2 < 0) r2 = 0;
  switch (t.kind) {
    case KernelKind::Rbf: {
      double e = std::exp(-0.5 * t.theta[1] * r2);
      out[0] = e;
      out[1] = -0.5 * r2 * t.theta[0] * e;
      return;
    }
    case KernelKind::Linear:
      out[0] = dot;
      return;
    case KernelKind::Matern32: {
      double u = std::sqrt(3.0 * t.theta[1] * r2);
      double e = std::exp(-u);
      out[0] = (1.0 + u) * e;
      out[1] = -t.theta[0] * u * u * e / (2.0 * t.theta[1]);
      return;
    }
    case KernelKind::Matern52: {
      double u = std::sqrt(5.0 * t.theta[1] * r2);
      double e = std::exp(-u);
      out[0] = (1.0 + u + u * u / 3.0) * e;
      out[1] = -t.theta[0] * u * u * (1.0 + u) * e / (6.0 * t.theta[1]);
      return;
    }
    case KernelKind::RationalQuadratic: {
      double s = t.theta[2];
      double z = 1.0 + t.theta[1] * r2 / (2.0 * s);
      double zs = std::pow(z, -s);
      out[0] = zs;
      out[1] = -t.theta[0] * 0.5 * r2 * zs / z;
      out[2] = t.theta[0] * zs * (-std::log(z) + t.theta[1] * r2 / (2.0 * s * z));
      return;
    }
    case KernelKind::Polynomial: {
      double base = dot + t.theta[1];
      double p1 = std::pow(base, t.degree - 1);
      out[0] = p1 * base;
      out[1] = t.theta[0] * t.degree * p1;
      return;
    }
  }
}

// d k(x, x') / d x = c_diff * (x - x') + c_xp * x' (weighted term).
void term_input_coeffs(const KernelTerm& t, double r2, double dot, double* c_diff,
                       double* c_xp) {
  if (r2 < 0) r2 = 0;
  *c_diff = 0.0;
  *c_xp = 0.0;
  switch (t.kind) {
    case KernelKind::Rbf:
      *c_diff = -t.weight * t.theta[0] * t.theta[1] * std::exp(-0.5 * t.theta[1] * r2);
      return;
    case KernelKind::Linear:
      *c_xp = t.weight * t.theta[0];
      return;
    case KernelKind::Matern32: {
      double u = std::sqrt(3.0 * t.theta[1] * r2);
      *c_diff = -3.0 * t.weight * t.theta[0] * t.theta[1] * std::exp(-u);
      return;
    }
    case KernelKind::Matern52: {
      double u = std::sqrt(5.0 * t.theta[1] * r2);
      *c_diff = -t.weight * t.theta[0] * (5.0 * t.theta[1] / 3.0) * (1.0 + u) * std::exp(-u);
      return;
    }
    case KernelKind::RationalQuadratic: {
      double s = t.theta[2];
      double z = 1.0 + t.theta[1] * r2 / (2.0 * s);
      *c_diff = -t.weight * t.theta[0] * t.theta[1] * std::pow(z, -s - 1.0);
      return;
    }
    case KernelKind::Polynomial: {
      *c_xp = t.weight * t.theta[0] * t.degree * std::pow(dot + t.theta[1], t.degree - 1);
      return;
    }
  }
}

bool needs_r2(KernelKind kind) {
  return kind != KernelKind::Linear && kind != KernelKind::Polynomial;
}

bool needs_dot(KernelKind kind) {
  return kind == KernelKind::Linear || kind == KernelKind::Polynomial;
}

struct PairCache {
  Eigen::MatrixXd r2;   // squared distances, empty when unused
  Eigen::MatrixXd dot;  // inner products, empty when unused
};

PairCache pair_cache(const KernelSpec& spec, const Eigen::MatrixXd& rows) {
  PairCache cache;
  bool want_r2 = false, want_dot = false;
  for (const auto& t : spec.terms) {
    want_r2 = want_r2 || needs_r2(t.kind);
    want_dot = want_dot || needs_dot(t.kind);
  }
  if (want_r2 || want_dot) {
    Eigen::MatrixXd dots = rows * rows.transpose();
    if (want_r2) {
      Eigen::VectorXd sq = dots.diagonal();
      cache.r2 = (-2.0 * dots).colwise() + sq;
      cache.r2.rowwise() += sq.transpose();
      cache.r2 = cache.r2.cwiseMax(0.0);
    }
    if (want_dot) cache.dot = std::move(dots);
  }
  return cache;
}

}  // namespace

double eval_kernel(const KernelSpec& spec, const Eigen::VectorXd& x,
                   const Eigen::VectorXd& xp, bool same_index) {
  spec.validate();
  if (x.size() != xp.size())
    throw std::invalid_argument("eval_kernel: dimension mismatch");
  double r2 = (x - xp).squaredNorm();
  double dot = x.dot(xp);
  double v = 0.0;
  for (const auto& t : spec.terms) v += t.weight * term_value(t, r2, dot);
  if (spec.include_noise && same_index) v += 1.0 / spec.noise_precision;
  return v;
}

GramMatrix gram(const KernelSpec& spec, const Eigen::MatrixXd& rows, double jitter_rel) {
  spec.validate();
  if (rows.rows() == 0) throw std::invalid_argument("gram: no rows");
  if (jitter_rel < 0) throw std::invalid_argument("gram: negative jitter");
  const Eigen::Index T = rows.rows();
  PairCache cache = pair_cache(spec, rows);
  GramMatrix out;
  out.values = Eigen::MatrixXd::Zero(T, T);
  for (const auto& t : spec.terms) {
    for (Eigen::Index a = 0; a < T; ++a) {
      for (Eigen::Index b = a; b < T; ++b) {
        double r2 = cache.r2.size() ? cache.r2(a, b) : 0.0;
        double dot = cache.dot.size() ? cache.dot(a, b) : 0.0;
        double v = t.weight * term_value(t, r2, dot);
        out.values(a, b) += v;
        if (b != a) out.values(b, a) += v;
      }
    }
  }
  if (spec.include_noise)
    out.values.diagonal().array() += 1.0 / spec.noise_precision;
  out.jitter = jitter_rel * out.values.diagonal().mean();
  out.values.diagonal().array() += out.jitter;
  return out;
}

std::vector<Eigen::MatrixXd> gram_hyper_grads(const KernelSpec& spec,
                                              const Eigen::MatrixXd& rows) {
  spec.validate();
  const Eigen::Index T = rows.rows();
  PairCache cache = pair_cache(spec, rows);
  std::vector<Eigen::MatrixXd> out;
  out.reserve(spec.hyper_count());
  for (const auto& t : spec.terms) {
    size_t first = out.size();
    out.emplace_back(Eigen::MatrixXd::Zero(T, T));  // d/d weight
    for (size_t j = 0; j < t.theta.size(); ++j)
      out.emplace_back(Eigen::MatrixXd::Zero(T, T));
    double tg[3];
    for (Eigen::Index a = 0; a < T; ++a) {
      for (Eigen::Index b = a; b < T; ++b) {
        double r2 = cache.r2.size() ? cache.r2(a, b) : 0.0;
        double dot = cache.dot.size() ? cache.dot(a, b) : 0.0;
        double v = term_value(t, r2, dot);
        out[first](a, b) = v;
        out[first](b, a) = v;
        term_theta_grads(t, r2, dot, tg);
        for (size_t j = 0; j < t.theta.size(); ++j) {
          double g = t.weight * tg[j];
          out[first + 1 + j](a, b) = g;
          out[first + 1 + j](b, a) = g;
        }
      }
    }
  }
  if (spec.include_noise) {
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(T, T);
    g.diagonal().setConstant(-1.0 / (spec.noise_precision * spec.noise_precision));
    out.push_back(std::move(g));
  }
  return out;
}

Eigen::MatrixXd gram_input_grad(const KernelSpec& spec, const Eigen::MatrixXd& rows,
                                const Eigen::MatrixXd& G) {
  spec.validate();
  const Eigen::Index T = rows.rows();
  if (G.rows() != T || G.cols() != T)
    throw std::invalid_argument("gram_input_grad: weight matrix shape mismatch");
  PairCache cache = pair_cache(spec, rows);
  Eigen::MatrixXd c_diff = Eigen::MatrixXd::Zero(T, T);
  Eigen::MatrixXd c_xp = Eigen::MatrixXd::Zero(T, T);
  for (const auto& t : spec.terms) {
    for (Eigen::Index a = 0; a < T; ++a) {
      for (Eigen::Index b = 0; b < T; ++b) {
        double r2 = cache.r2.size() ? cache.r2(a, b) : 0.0;
        double dot = cache.dot.size() ? cache.dot(a, b) : 0.0;
        double cd, cx;
        term_input_coeffs(t, r2, dot, &cd, &cx);
        c_diff(a, b) += cd;
        c_xp(a, b) += cx;
      }
    }
  }
  Eigen::MatrixXd H = G + G.transpose();
  Eigen::MatrixXd W = H.cwiseProduct(c_diff);
  // sum_b W(n,b) (x_n - x_b) + sum_b (H .* c_xp)(n,b) x_b
  Eigen::MatrixXd grad = W.rowwise().sum().asDiagonal() * rows - W * rows;
  grad += H.cwiseProduct(c_xp) * rows;
  return grad;
}

std::vector<Eigen::MatrixXd> gram_coord_grads(const KernelSpec& spec,
                                              const Eigen::MatrixXd& rows) {
  spec.validate();
  const Eigen::Index T = rows.rows();
  const Eigen::Index Q = rows.cols();
  PairCache cache = pair_cache(spec, rows);
  Eigen::MatrixXd c_diff = Eigen::MatrixXd::Zero(T, T);
  Eigen::MatrixXd c_xp = Eigen::MatrixXd::Zero(T, T);
  for (const auto& t : spec.terms) {
    for (Eigen::Index a = 0; a < T; ++a) {
      for (Eigen::Index b = 0; b < T; ++b) {
        double r2 = cache.r2.size() ? cache.r2(a, b) : 0.0;
        double dot = cache.dot.size() ? cache.dot(a, b) : 0.0;
        double cd, cx;
        term_input_coeffs(t, r2, dot, &cd, &cx);
        c_diff(a, b) += cd;
        c_xp(a, b) += cx;
      }
    }
  }
  std::vector<Eigen::MatrixXd> out;
  out.reserve(static_cast<size_t>(T) * Q);
  for (Eigen::Index n = 0; n < T; ++n) {
    for (Eigen::Index q = 0; q < Q; ++q) {
      Eigen::MatrixXd M = Eigen::MatrixXd::Zero(T, T);
      for (Eigen::Index b = 0; b < T; ++b) {
        double v = c_diff(n, b) * (rows(n, q) - rows(b, q)) + c_xp(n, b) * rows(b, q);
        M(n, b) += v;
        M(b, n) += v;
      }
      out.push_back(std::move(M));
    }
  }
  return out;
}

// ----------------------------------------------------------- text format ---

namespace {

// Splits on '+' at paren depth zero, ignoring exponent signs like "1e+3".
std::vector<std::string> split_terms(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  int depth = 0;
  char prev = 0;
  for (char c : text) {
    if (c == '(') ++depth;
    if (c == ')') --depth;
    if (c == '+' && depth == 0 && prev != 'e' && prev != 'E') {
      out.push_back(cur);
      cur.clear();
      prev = 0;
      continue;
    }
    cur.push_back(c);
    if (!std::isspace(static_cast<unsigned char>(c))) prev = c;
  }
  out.push_back(cur);
  return out;
}

KernelKind kind_from_name(const std::string& raw, int* degree) {
  std::string name = lower(raw);
  *degree = 2;
  if (name == "rbf") return KernelKind::Rbf;
  if (name == "linear" || name == "lin") return KernelKind::Linear;
  if (name == "matern32" || name == "m32") return KernelKind::Matern32;
  if (name == "matern52" || name == "m52") return KernelKind::Matern52;
  if (name == "rq" || name == "rational_quadratic" || name == "rationalquadratic")
    return KernelKind::RationalQuadratic;
  if (name == "polynomial" || name == "poly") return KernelKind::Polynomial;
  if (starts_with(name, "poly")) {
    *degree = static_cast<int>(parse_long(name.substr(4)));
    return KernelKind::Polynomial;
  }
  throw DomainError("kernel: unknown term kind '" + raw + "'");
}

}  // namespace

KernelSpec parse_kernel(const std::string& text) {
  std::string body = trim(text);
  // Tolerate a "kernel = ..." config-block prefix.
  size_t eq = body.find('=');
  if (eq != std::string::npos) {
    std::string head = lower(trim(body.substr(0, eq)));
    if (head == "kernel" || starts_with(head, "kernel_")) body = trim(body.substr(eq + 1));
  }
  if (body.empty()) throw DomainError("kernel: empty spec");

  KernelSpec spec;
  for (const std::string& rawTerm : split_terms(body)) {
    std::string term = trim(rawTerm);
    if (term.empty()) throw DomainError("kernel: empty term in '" + text + "'");
    double weight = 1.0;
    // Optional "w*" prefix; '*' inside parens never applies.
    size_t star = std::string::npos;
    int depth = 0;
    for (size_t i = 0; i < term.size(); ++i) {
      if (term[i] == '(') ++depth;
      if (term[i] == ')') --depth;
      if (term[i] == '*' && depth == 0) {
        star = i;
        break;
      }
    }
    std::string rest = term;
    if (star != std::string::npos) {
      weight = parse_double(term.substr(0, star));
      rest = trim(term.substr(star + 1));
    }
    size_t open = rest.find('(');
    if (open == std::string::npos || rest.back() != ')')
      throw DomainError("kernel: malformed term '" + term + "'");
    std::string name = trim(rest.substr(0, open));
    std::string args = rest.substr(open + 1, rest.size() - open - 2);
    std::vector<double> values;
    for (auto& piece : split(args, ',')) {
      if (!trim(piece).empty()) values.push_back(parse_double(piece));
    }
    if (lower(name) == "noise") {
      if (values.size() != 1)
        throw DomainError("kernel: noise takes exactly one variance argument");
      if (!(values[0] > 0)) throw DomainError("kernel: noise variance must be positive");
      spec.include_noise = true;
      spec.noise_precision = 1.0 / values[0];
      continue;
    }
    KernelTerm kt;
    kt.kind = kind_from_name(name, &kt.degree);
    kt.weight = weight;
    kt.theta = values;
    spec.terms.push_back(std::move(kt));
  }
  spec.validate();
  return spec;
}

std::string format_kernel(const KernelSpec& spec) {
  spec.validate();
  std::ostringstream out;
  bool first = true;
  for (const auto& t : spec.terms) {
    if (!first) out << " + ";
    first = false;
    out << format_double(t.weight) << "*";
    if (t.kind == KernelKind::Polynomial)
      out << "poly" << t.degree;
    else
      out << kernel_kind_name(t.kind);
    out << "(";
    for (size_t j = 0; j < t.theta.size(); ++j) {
      if (j) out << ",";
      out << format_double(t.theta[j]);
    }
    out << ")";
  }
  if (spec.include_noise)
    out << " + noise(" << format_double(1.0 / spec.noise_precision) << ")";
  return out.str();
}

}  // namespace gpdm
