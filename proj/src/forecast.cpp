#include "gpdm/forecast.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "gpdm/util.hpp"

namespace gpdm {

namespace {

bool assembled_layout(const TrainingSet& ts) {
  return ts.columns.size() >= 3 && ts.columns[0] == "cycle" &&
         ts.columns[1] == "label" && ts.columns[2] == "soh" &&
         ts.transforms.size() == ts.columns.size();
}

ColumnTransform column_transform(const TrainingSet& ts, Eigen::Index col) {
  if (col < static_cast<Eigen::Index>(ts.transforms.size())) return ts.transforms[col];
  return ColumnTransform{};
}

}  // namespace

EolRul eol_rul(const Eigen::VectorXd& soh, double threshold, int current_cycle) {
  EolRul out;
  for (Eigen::Index i = 0; i < soh.size(); ++i) {
    if (soh(i) <= threshold) {
      out.eol = static_cast<int>(i) + 1;
      out.rul = *out.eol - current_cycle;
      break;
    }
  }
  return out;
}

Forecaster::Forecaster(const GpdmModel& model, const ForecastConfig& cfg)
    : model_(model),
      cfg_(cfg),
      dynamics_(model.params.X.topRows(model.params.X.rows() - 1),
                model.params.X.bottomRows(model.params.X.rows() - 1),
                model.params.kernel_x, model.params.L_x.outer(), model.params.sigma2_x,
                cfg.jitter_rel),
      observation_(model.params.X, model.data.Y, model.params.kernel_y,
                   model.params.L_y.outer(), model.params.sigma2_y, cfg.jitter_rel) {
  if (model_.kind != "gpdm")
    throw std::invalid_argument("Forecaster: model kind '" + model_.kind +
                                "' has no transition map");
  const Eigen::MatrixXd& X = model_.params.X;
  const Eigen::Index T = X.rows();
  if (T < 2) throw std::invalid_argument("Forecaster: need at least 2 latent rows");
  if (model_.data.Y.rows() != T)
    throw std::invalid_argument("Forecaster: latent/observation row mismatch");
  if (!(cfg_.divergence_factor > 0.0))
    throw std::invalid_argument("Forecaster: divergence_factor must be positive");
  if (!(cfg_.band_z >= 0.0))
    throw std::invalid_argument("Forecaster: band_z must be non-negative");

  radius_ = 0.0;
  for (Eigen::Index i = 0; i < T; ++i)
    radius_ = std::max(radius_, X.row(i).norm());

  assembled_ = assembled_layout(model_.data);
  Eigen::Index anchor_row = T - 1;
  if (assembled_) {
    const double label_value =
        column_transform(model_.data, 1).apply(static_cast<double>(model_.data.target_label));
    bool found = false;
    for (Eigen::Index i = 0; i < T; ++i) {
      if (model_.data.Y(i, 1) != label_value) continue;
      if (!found || model_.data.Y(i, 0) > model_.data.Y(anchor_row, 0)) anchor_row = i;
      found = true;
    }
    if (!found)
      throw DomainError("Forecaster: target battery has no training rows");
    const double raw_cycle = column_transform(model_.data, 0).invert(model_.data.Y(anchor_row, 0));
    current_cycle_ = static_cast<int>(std::lround(raw_cycle));
  } else {
    current_cycle_ = static_cast<int>(T);
  }
  anchor_ = X.row(anchor_row).transpose();
}

void Forecaster::latent_step(const Eigen::VectorXd& x, Eigen::VectorXd* mean,
                             Eigen::MatrixXd* cov) const {
  dynamics_.predict(x, mean, cov);
}

void Forecaster::observe(const Eigen::VectorXd& x, Eigen::VectorXd* mean,
                         Eigen::MatrixXd* cov) const {
  observation_.predict(x, mean, cov);
}

ForecastResult Forecaster::rollout(int horizon, double threshold) const {
  if (horizon <= current_cycle_)
    throw std::invalid_argument("rollout: horizon must exceed the current cycle");
  if (!(threshold > 0.0 && threshold <= 1.0))
    throw std::invalid_argument("rollout: threshold must lie in (0, 1]");
  if (model_.data.dims() < 3)
    throw std::invalid_argument("rollout: training set must have a soh column");

  const Eigen::Index D = model_.data.dims();
  const Eigen::Index Q = model_.params.X.cols();
  const int steps = horizon - current_cycle_;
  const double bound =
      radius_ > 0.0 ? cfg_.divergence_factor * radius_
                    : std::numeric_limits<double>::infinity();
  const ColumnTransform cyc_tf = column_transform(model_.data, 0);
  const ColumnTransform lab_tf = column_transform(model_.data, 1);
  const ColumnTransform soh_tf = column_transform(model_.data, 2);
  const double label_value = lab_tf.apply(static_cast<double>(model_.data.target_label));

  ForecastResult fc;
  fc.y_mean.resize(steps, D);
  fc.y_var.reserve(static_cast<size_t>(steps));
  fc.latent_path.resize(steps, Q);
  fc.soh_mean.resize(steps);
  fc.soh_lo.resize(steps);
  fc.soh_hi.resize(steps);

  Eigen::VectorXd x = anchor_;
  Eigen::VectorXd mx, my;
  Eigen::MatrixXd Px, Py;
  int done = 0;
  for (int j = 0; j < steps; ++j) {
    dynamics_.predict(x, &mx, &Px);
    x = mx;
    if (x.norm() > bound) {
      fc.truncated = true;
      fc.warnings.push_back("rollout truncated at cycle " +
                            std::to_string(current_cycle_ + j) +
                            ": latent trajectory diverged");
      break;
    }
    const int cycle = current_cycle_ + 1 + j;
    fc.latent_path.row(j) = x.transpose();
    observation_.predict(x, &my, &Py);
    if (assembled_ && cfg_.pin_deterministic_columns) {
      my(0) = cyc_tf.apply(static_cast<double>(cycle));
      my(1) = label_value;
    }
    fc.cycles.push_back(cycle);
    fc.y_mean.row(j) = my.transpose();
    const double var = Py(2, 2);
    if (var < -1.0e-10)
      fc.warnings.push_back("negative predictive variance " + format_double(var) +
                            " at cycle " + std::to_string(cycle));
    const double sd = std::sqrt(std::max(var, 0.0));
    fc.soh_mean(j) = soh_tf.invert(my(2));
    fc.soh_lo(j) = soh_tf.invert(my(2) - cfg_.band_z * sd);
    fc.soh_hi(j) = soh_tf.invert(my(2) + cfg_.band_z * sd);
    fc.y_var.push_back(Py);
    done = j + 1;
  }
  if (done < steps) {
    fc.y_mean.conservativeResize(done, D);
    fc.latent_path.conservativeResize(done, Q);
    fc.soh_mean.conservativeResize(done);
    fc.soh_lo.conservativeResize(done);
    fc.soh_hi.conservativeResize(done);
  }
  for (int j = 0; j < done; ++j) {
    if (fc.soh_mean(j) <= threshold) {
      fc.eol = fc.cycles[j];
      fc.rul = *fc.eol - current_cycle_;
      break;
    }
  }
  return fc;
}

void latent_step(const GpdmModel& model, const Eigen::VectorXd& x,
                 Eigen::VectorXd* mean, Eigen::MatrixXd* cov) {
  Forecaster(model).latent_step(x, mean, cov);
}

void observe(const GpdmModel& model, const Eigen::VectorXd& x, Eigen::VectorXd* mean,
             Eigen::MatrixXd* cov) {
  Forecaster(model).observe(x, mean, cov);
}

ForecastResult rollout(const GpdmModel& model, int horizon, double threshold,
                       const ForecastConfig& cfg) {
  return Forecaster(model, cfg).rollout(horizon, threshold);
}

std::string forecast_to_csv(const GpdmModel& model, const ForecastResult& fc) {
  const TrainingSet& ts = model.data;
  if (ts.dims() < 3)
    throw std::invalid_argument("forecast_to_csv: training set must have a soh column");
  std::ostringstream out;
  out << "cycle,soh_mean,soh_lo,soh_hi";
  for (Eigen::Index c = 3; c < ts.dims(); ++c) {
    const std::string name =
        c < static_cast<Eigen::Index>(ts.columns.size()) ? ts.columns[c]
                                                         : "col" + std::to_string(c);
    out << "," << name << "_mean";
  }
  out << "\n";
  for (size_t j = 0; j < fc.cycles.size(); ++j) {
    const Eigen::Index r = static_cast<Eigen::Index>(j);
    out << fc.cycles[j] << "," << format_double(fc.soh_mean(r)) << ","
        << format_double(fc.soh_lo(r)) << "," << format_double(fc.soh_hi(r));
    for (Eigen::Index c = 3; c < ts.dims(); ++c)
      out << "," << format_double(column_transform(ts, c).invert(fc.y_mean(r, c)));
    out << "\n";
  }
  return out.str();
}

std::string latent_path_to_csv(const ForecastResult& fc) {
  std::ostringstream out;
  out << "cycle";
  for (Eigen::Index q = 0; q < fc.latent_path.cols(); ++q) out << ",x" << q;
  out << "\n";
  for (size_t j = 0; j < fc.cycles.size(); ++j) {
    out << fc.cycles[j];
    const Eigen::Index r = static_cast<Eigen::Index>(j);
    for (Eigen::Index q = 0; q < fc.latent_path.cols(); ++q)
      out << "," << format_double(fc.latent_path(r, q));
    out << "\n";
  }
  return out.str();
}

}  // namespace gpdm
