#include "gpdm/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "gpdm/util.hpp"
#include "fit_internal.hpp"
#include "json_io.hpp"

namespace gpdm {

// ------------------------------------------------------------------- pca ---

PcaResult pca_init(const Eigen::MatrixXd& Y, int Q) {
  const Eigen::Index T = Y.rows(), D = Y.cols();
  if (Q < 1 || Q > D) throw std::invalid_argument("pca: Q must lie in [1, D]");
  if (T < 1) throw std::invalid_argument("pca: empty data");

  PcaResult out;
  out.mean = Y.colwise().mean();
  Eigen::MatrixXd Yc = Y.rowwise() - out.mean.transpose();

  if (T < 2 || Yc.norm() == 0.0) {
    out.X = Eigen::MatrixXd::Zero(T, Q);
    out.W = Eigen::MatrixXd::Identity(D, Q);
    out.variances = Eigen::VectorXd::Zero(Q);
    out.degenerate = true;
    return out;
  }

  Eigen::MatrixXd C = Yc.transpose() * Yc / static_cast<double>(T - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(C);
  out.W.resize(D, Q);
  out.variances.resize(Q);
  for (int q = 0; q < Q; ++q) {
    Eigen::VectorXd w = es.eigenvectors().col(D - 1 - q);  // descending variance
    Eigen::Index imax;
    w.cwiseAbs().maxCoeff(&imax);
    if (w(imax) < 0) w = -w;
    out.W.col(q) = w;
    out.variances(q) = std::max(es.eigenvalues()(D - 1 - q), 0.0);
  }
  out.X = Yc * out.W;
  return out;
}

// -------------------------------------------------------------- optimizer ---

namespace {

// Probe value for line search: exceptions and non-finite results both read
// as an unacceptable step.
double probe(const Objective& f, const Eigen::VectorXd& x) {
  try {
    double v = f(x, nullptr);
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  } catch (const std::exception&) {
    return std::numeric_limits<double>::infinity();
  }
}

}  // namespace

MinimizeResult minimize(const Objective& f, const Eigen::VectorXd& x0,
                        const MinimizeOptions& opt) {
  if (opt.max_iters < 0) throw std::invalid_argument("minimize: negative max_iters");
  if (!(opt.rel_tol > 0)) throw std::invalid_argument("minimize: rel_tol must be > 0");
  if (opt.method != "cg" && opt.method != "gd")
    throw std::invalid_argument("minimize: unknown method '" + opt.method + "'");
  const bool cg = opt.method == "cg";
  constexpr double kArmijo = 1e-4;
  constexpr int kMaxHalvings = 60;

  MinimizeResult res;
  res.x = x0;
  Eigen::VectorXd g(x0.size());
  double fx = f(res.x, &g);
  if (!std::isfinite(fx) || !g.allFinite())
    throw DomainError("minimize: objective non-finite at the starting point");
  res.trace.push_back(fx);

  Eigen::VectorXd d = -g;
  double alpha_seed = 1.0;
  for (; res.iters < opt.max_iters; ++res.iters) {
    if (g.norm() < opt.rel_tol * (1.0 + std::abs(fx))) {
      res.converged = true;
      break;
    }
    double slope = d.dot(g);
    if (!(slope < 0)) {
      d = -g;
      slope = -g.squaredNorm();
    }

    bool accepted = false;
    double alpha = std::min(2.0 * alpha_seed, 1e6);
    Eigen::VectorXd cand;
    for (int steepest_pass = 0; steepest_pass < 2 && !accepted; ++steepest_pass) {
      if (steepest_pass == 1) {
        if (d == -g) break;  // already searching along steepest descent
        d = -g;
        slope = -g.squaredNorm();
        alpha = std::min(2.0 * alpha_seed, 1e6);
      }
      for (int h = 0; h < kMaxHalvings; ++h) {
        cand = res.x + alpha * d;
        double fn = probe(f, cand);
        if (fn <= fx + kArmijo * alpha * slope) {
          accepted = true;
          break;
        }
        alpha *= 0.5;
      }
    }
    if (!accepted) break;  // no progress possible along available directions

    res.x = cand;
    Eigen::VectorXd gn(g.size());
    fx = f(res.x, &gn);
    res.trace.push_back(fx);
    double beta = 0.0;
    if (cg) {
      double denom = g.squaredNorm();
      if (denom > 0) beta = std::max(0.0, gn.dot(gn - g) / denom);
    }
    d = -gn + beta * d;
    g = gn;
    alpha_seed = alpha;
  }

  res.grad_norm = g.norm();
  if (!res.converged) res.converged = res.grad_norm < opt.rel_tol * (1.0 + std::abs(fx));
  return res;
}

// ------------------------------------------------------ parameter packing ---

namespace {

Eigen::Index lower_entries(Eigen::Index n) { return n * (n + 1) / 2; }

}  // namespace

Eigen::Index packed_size(const GpdmParams& params, const PackLayout& layout) {
  Eigen::Index n = 0;
  if (layout.with_x) n += params.X.size();
  if (layout.with_kernel_y) n += params.kernel_y.hyper_count();
  if (layout.with_kernel_x) n += params.kernel_x.hyper_count();
  if (layout.with_L_y) n += lower_entries(params.L_y.L.rows());
  if (layout.with_L_x) n += lower_entries(params.L_x.L.rows());
  if (layout.with_sigma_y) n += 1;
  if (layout.with_sigma_x) n += 1;
  return n;
}

Eigen::VectorXd pack_params(const GpdmParams& params, const PackLayout& layout) {
  Eigen::VectorXd v(packed_size(params, layout));
  Eigen::Index k = 0;
  if (layout.with_x)
    for (Eigen::Index n = 0; n < params.X.rows(); ++n)
      for (Eigen::Index q = 0; q < params.X.cols(); ++q) v(k++) = params.X(n, q);
  if (layout.with_kernel_y)
    for (double h : params.kernel_y.hyper_values()) v(k++) = std::log(h);
  if (layout.with_kernel_x)
    for (double h : params.kernel_x.hyper_values()) v(k++) = std::log(h);
  auto pack_L = [&](const Eigen::MatrixXd& L) {
    for (Eigen::Index i = 0; i < L.rows(); ++i)
      for (Eigen::Index j = 0; j <= i; ++j)
        v(k++) = (i == j) ? std::log(L(i, i)) : L(i, j);
  };
  if (layout.with_L_y) pack_L(params.L_y.L);
  if (layout.with_L_x) pack_L(params.L_x.L);
  if (layout.with_sigma_y) v(k++) = 0.5 * std::log(params.sigma2_y);
  if (layout.with_sigma_x) v(k++) = 0.5 * std::log(params.sigma2_x);
  return v;
}

void unpack_params(const Eigen::VectorXd& v, const PackLayout& layout,
                   GpdmParams* params) {
  if (v.size() != packed_size(*params, layout))
    throw std::invalid_argument("unpack: length mismatch");
  Eigen::Index k = 0;
  if (layout.with_x)
    for (Eigen::Index n = 0; n < params->X.rows(); ++n)
      for (Eigen::Index q = 0; q < params->X.cols(); ++q) params->X(n, q) = v(k++);
  auto unpack_kernel = [&](KernelSpec* spec) {
    auto h = spec->hyper_values();
    for (auto& x : h) x = std::exp(v(k++));
    spec->set_hyper_values(h);
  };
  if (layout.with_kernel_y) unpack_kernel(&params->kernel_y);
  if (layout.with_kernel_x) unpack_kernel(&params->kernel_x);
  auto unpack_L = [&](Eigen::MatrixXd* L) {
    for (Eigen::Index i = 0; i < L->rows(); ++i)
      for (Eigen::Index j = 0; j <= i; ++j) {
        (*L)(i, j) = (i == j) ? std::exp(v(k)) : v(k);
        ++k;
      }
  };
  if (layout.with_L_y) unpack_L(&params->L_y.L);
  if (layout.with_L_x) unpack_L(&params->L_x.L);
  if (layout.with_sigma_y) params->sigma2_y = std::exp(2.0 * v(k++));
  if (layout.with_sigma_x) params->sigma2_x = std::exp(2.0 * v(k++));
}

Eigen::VectorXd pack_gradient(const GpdmParams& params, const GpdmGradient& grad,
                              const PackLayout& layout) {
  Eigen::VectorXd v(packed_size(params, layout));
  Eigen::Index k = 0;
  if (layout.with_x)
    for (Eigen::Index n = 0; n < params.X.rows(); ++n)
      for (Eigen::Index q = 0; q < params.X.cols(); ++q) v(k++) = grad.dX(n, q);
  auto pack_hyper = [&](const KernelSpec& spec, const std::vector<double>& d) {
    auto h = spec.hyper_values();
    for (size_t i = 0; i < h.size(); ++i) v(k++) = h[i] * d[i];
  };
  if (layout.with_kernel_y) pack_hyper(params.kernel_y, grad.d_hyper_y);
  if (layout.with_kernel_x) pack_hyper(params.kernel_x, grad.d_hyper_x);
  auto pack_dL = [&](const Eigen::MatrixXd& L, const Eigen::MatrixXd& dL) {
    for (Eigen::Index i = 0; i < L.rows(); ++i)
      for (Eigen::Index j = 0; j <= i; ++j)
        v(k++) = (i == j) ? L(i, i) * dL(i, i) : dL(i, j);
  };
  if (layout.with_L_y) pack_dL(params.L_y.L, grad.dL_y);
  if (layout.with_L_x) pack_dL(params.L_x.L, grad.dL_x);
  if (layout.with_sigma_y) v(k++) = 2.0 * params.sigma2_y * grad.d_sigma2_y;
  if (layout.with_sigma_x) v(k++) = 2.0 * params.sigma2_x * grad.d_sigma2_x;
  return v;
}

// ------------------------------------------------------------------- fit ---

void TrainConfig::validate() const {
  if (q < 0) throw std::invalid_argument("train: q must be >= 1 (or 0 for all)");
  if (optimizer != "cg" && optimizer != "gd")
    throw std::invalid_argument("train: optimizer must be cg or gd");
  if (max_iters < 0) throw std::invalid_argument("train: negative max_iters");
  if (!(rel_tol > 0)) throw std::invalid_argument("train: rel_tol must be > 0");
  if (restarts < 1) throw std::invalid_argument("train: restarts must be >= 1");
  if (init_jitter < 0) throw std::invalid_argument("train: negative init_jitter");
}

double median_squared_distance(const Eigen::MatrixXd& rows) {
  const Eigen::Index T = rows.rows();
  if (T < 2) return 0.0;
  std::vector<double> d2;
  d2.reserve(T * (T - 1) / 2);
  for (Eigen::Index i = 0; i < T; ++i)
    for (Eigen::Index j = i + 1; j < T; ++j)
      d2.push_back((rows.row(i) - rows.row(j)).squaredNorm());
  size_t mid = d2.size() / 2;
  std::nth_element(d2.begin(), d2.begin() + mid, d2.end());
  return d2[mid];
}

void heuristic_kernel_init(KernelSpec* spec, double med_sq_dist) {
  double inv = med_sq_dist > 0 ? 1.0 / med_sq_dist : 1.0;
  for (auto& term : spec->terms) {
    term.weight = 1.0;
    switch (term.kind) {
      case KernelKind::Rbf:
      case KernelKind::Matern32:
      case KernelKind::Matern52:
        term.theta = {1.0, inv};
        break;
      case KernelKind::RationalQuadratic:
        term.theta = {1.0, inv, 1.0};
        break;
      case KernelKind::Linear:
        term.theta = {1.0};
        break;
      case KernelKind::Polynomial:
        term.theta = {1.0, 1.0};
        break;
    }
  }
}

namespace {

bool assembled_layout(const TrainingSet& ts) {
  return ts.columns.size() >= 2 && ts.columns[0] == "cycle" && ts.columns[1] == "label";
}

Eigen::MatrixXd canonical_rows(const TrainingSet& ts) {
  if (!assembled_layout(ts)) return ts.Y;
  std::vector<Eigen::Index> order(ts.Y.rows());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    if (ts.Y(a, 1) != ts.Y(b, 1)) return ts.Y(a, 1) < ts.Y(b, 1);
    return ts.Y(a, 0) < ts.Y(b, 0);
  });
  Eigen::MatrixXd out(ts.Y.rows(), ts.Y.cols());
  for (Eigen::Index i = 0; i < out.rows(); ++i) out.row(i) = ts.Y.row(order[i]);
  return out;
}

double entry_variance(const Eigen::MatrixXd& M) {
  double mean = M.mean();
  return (M.array() - mean).square().sum() / static_cast<double>(M.size());
}

}  // namespace

namespace internal {

GpdmModel fit_impl(const TrainingSet& ts, const KernelSpec& kernel_y,
                   const KernelSpec& kernel_x, const TrainConfig& cfg,
                   bool with_dynamics) {
  cfg.validate();
  kernel_y.validate();
  kernel_x.validate();
  if (kernel_y.include_noise || kernel_x.include_noise)
    throw std::invalid_argument(
        "fit: kernel delta terms are unsupported; noise enters via sigma2");
  if (ts.Y.rows() < 3) throw std::invalid_argument("fit: need at least 3 rows");

  GpdmModel model;
  model.kind = with_dynamics ? "gpdm" : "gplvm";
  model.data = ts;
  model.data.Y = canonical_rows(ts);
  model.seed = cfg.seed;
  model.dimension_exponents = cfg.dimension_exponents;
  const Eigen::MatrixXd& Y = model.data.Y;
  const Eigen::Index D = Y.cols();
  const int Q = cfg.q == 0 ? static_cast<int>(D) : cfg.q;
  if (Q < 1 || Q > D)
    throw std::invalid_argument("fit: latent dimension must lie in [1, D]");

  PcaResult pca = pca_init(Y, Q);
  if (pca.degenerate)
    model.warnings.push_back("zero-variance observations; latents initialized to zero");

  GpdmParams base;
  base.X = pca.X;
  base.kernel_y = kernel_y;
  base.kernel_x = kernel_x;
  if (cfg.heuristic_init) {
    double med = median_squared_distance(pca.X);
    heuristic_kernel_init(&base.kernel_y, med);
    heuristic_kernel_init(&base.kernel_x, med);
  }
  base.L_y = CholeskyFactor::identity(static_cast<int>(D));
  base.L_x = CholeskyFactor::identity(Q);
  base.sigma2_y = std::max(0.01 * entry_variance(Y), 1e-8);
  base.sigma2_x = std::max(0.01 * entry_variance(pca.X), 1e-8);

  ObjectiveConfig ocfg;
  ocfg.dimension_exponents = cfg.dimension_exponents;
  ocfg.jitter_rel = cfg.jitter_rel;
  PackLayout layout;  // every block trainable...
  if (!with_dynamics) {
    layout.with_kernel_x = false;  // ...except the inert transition side
    layout.with_L_x = false;
    layout.with_sigma_x = false;
  }

  MinimizeOptions mopt;
  mopt.method = cfg.optimizer;
  mopt.max_iters = cfg.max_iters;
  mopt.rel_tol = cfg.rel_tol;

  bool have_best = false;
  for (int r = 0; r < cfg.restarts; ++r) {
    GpdmParams start = base;
    if (r > 0 && cfg.init_jitter > 0) {
      Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(r)));
      for (Eigen::Index i = 0; i < start.X.rows(); ++i)
        for (Eigen::Index j = 0; j < start.X.cols(); ++j)
          start.X(i, j) += cfg.init_jitter * rng.normal();
    }

    GpdmParams work = start;
    Objective obj = [&](const Eigen::VectorXd& v, Eigen::VectorXd* grad) {
      unpack_params(v, layout, &work);
      if (!grad) {
        return with_dynamics ? neg_log_posterior(Y, work, ocfg)
                             : objective_terms(Y, work, ocfg).observation_only();
      }
      GpdmGradient g;
      double value = neg_log_posterior_grad(Y, work, &g, ocfg, with_dynamics);
      *grad = pack_gradient(work, g, layout);
      return value;
    };

    MinimizeResult mr = minimize(obj, pack_params(start, layout), mopt);
    if (!have_best || mr.trace.back() < model.trace.back()) {
      have_best = true;
      unpack_params(mr.x, layout, &work);
      model.params = work;
      model.trace = mr.trace;
      model.final_grad_norm = mr.grad_norm;
      model.converged = mr.converged;
      model.restart = r;
    }
  }
  return model;
}

}  // namespace internal

GpdmModel fit(const TrainingSet& ts, const KernelSpec& kernel_y,
              const KernelSpec& kernel_x, const TrainConfig& cfg) {
  return internal::fit_impl(ts, kernel_y, kernel_x, cfg, /*with_dynamics=*/true);
}

// ------------------------------------------------------------ persistence ---

std::string model_to_text(const GpdmModel& model) {
  nlohmann::json j;
  j["format"] = "gpdm-model";
  j["version"] = 1;
  j["kind"] = model.kind;
  j["params"] = nlohmann::json::parse(params_to_text(model.params));
  j["data"] = nlohmann::json::parse(training_set_to_text(model.data));
  j["trace"] = model.trace;
  j["final_grad_norm"] = model.final_grad_norm;
  j["converged"] = model.converged;
  j["seed"] = model.seed;
  j["restart"] = model.restart;
  j["dimension_exponents"] = model.dimension_exponents;
  j["warnings"] = model.warnings;
  return j.dump(2) + "\n";
}

GpdmModel model_from_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DomainError(std::string("model: bad JSON: ") + e.what());
  }
  if (j.value("format", "") != "gpdm-model")
    throw DomainError("model: unrecognized format tag");
  if (j.value("version", 0) != 1) throw DomainError("model: unsupported version");
  GpdmModel m;
  m.kind = j.at("kind").get<std::string>();
  if (m.kind != "gpdm" && m.kind != "gplvm" && m.kind != "gp")
    throw DomainError("model: unknown kind '" + m.kind + "'");
  m.params = params_from_text(j.at("params").dump());
  m.data = training_set_from_text(j.at("data").dump());
  m.trace = j.at("trace").get<std::vector<double>>();
  m.final_grad_norm = j.at("final_grad_norm").get<double>();
  m.converged = j.at("converged").get<bool>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.restart = j.at("restart").get<int>();
  m.dimension_exponents = j.at("dimension_exponents").get<bool>();
  m.warnings = j.at("warnings").get<std::vector<std::string>>();
  return m;
}

void save_model(const GpdmModel& model, const std::string& path) {
  atomic_write_file(path, model_to_text(model));
}

GpdmModel load_model(const std::string& path) {
  return model_from_text(read_file(path));
}

}  // namespace gpdm
