#include "badiff/training.hpp"

#include <cmath>
#include <fstream>

#include "badiff/errors.hpp"
#include "badiff/ops.hpp"

namespace badiff {

EntropyBudget sample_budget(RngStream& rng, const BudgetRange& range) {
  if (!(range.lo <= range.hi)) {
    throw std::invalid_argument("sample_budget: empty range");
  }
  return EntropyBudget{rng.uniform(range.lo, range.hi)};
}

AdamState::AdamState(const ParamSet& params, AdamConfig cfg) : cfg_(cfg) {
  m_.resize(params.size());
  v_.resize(params.size());
  for (size_t i = 0; i < params.size(); ++i) {
    m_[i].assign(static_cast<size_t>(params[i].tensor.numel()), 0.0);
    v_[i].assign(static_cast<size_t>(params[i].tensor.numel()), 0.0);
  }
}

void AdamState::step(ParamSet& params) {
  if (m_.size() != params.size()) {
    throw std::invalid_argument("adam: state does not match parameter set");
  }
  // global-norm clip over trainable gradients
  double sq = 0.0;
  for (size_t i = 0; i < params.size(); ++i) {
    if (!params[i].trainable) continue;
    for (double g : params[i].tensor.grad()) {
      if (!std::isfinite(g)) throw numeric_error("adam: non-finite gradient");
      sq += g * g;
    }
  }
  double norm = std::sqrt(sq);
  double scale = (cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm)
                     ? cfg_.clip_norm / norm
                     : 1.0;
  ++t_;
  double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (size_t i = 0; i < params.size(); ++i) {
    if (!params[i].trainable) continue;
    auto& value = params[i].tensor.values();
    auto& grad = params[i].tensor.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (size_t j = 0; j < value.size(); ++j) {
      double g = grad[j] * scale;
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g;
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g * g;
      double mhat = m[j] / bc1;
      double vhat = v[j] / bc2;
      value[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

Tensor total_loss(const Model& model, const TrainingBatch& batch,
                  const LossWeights& weights,
                  const std::vector<LabelRecord>* labels,
                  const std::string& stop_budget, LossBreakdown* breakdown) {
  int n = batch.x0.dim(0);
  if (static_cast<int>(batch.t.size()) != n ||
      static_cast<int>(batch.budgets.size()) != n ||
      static_cast<int>(batch.image_ids.size()) != n) {
    throw std::invalid_argument("total_loss: batch field sizes disagree");
  }
  const NoiseSchedule& sched = model.schedule();

  Tensor x_t = forward_diffuse(batch.x0, batch.t, batch.eps, sched);
  Tensor h = model.embed().forward(batch.budgets);
  auto out = model.denoiser().forward(x_t, batch.t, h);

  Tensor loss = ops::mean_all(ops::square(ops::sub(batch.eps, out.eps)));
  LossBreakdown bd;
  bd.denoise = loss.item();

  double mean_h_target = 0.0;
  for (const auto& b : batch.budgets) mean_h_target += b.bpp;
  bd.mean_h_target = mean_h_target / n;

  if (weights.lambda_ent > 0.0 || weights.lambda_cal > 0.0) {
    Tensor x0_hat = reconstruct_x0(x_t, batch.t, out.eps, sched);
    LogisticParams lp = model.entropy().predict_params(x0_hat);
    Tensor h_pred = model.entropy().bpp(x0_hat, lp);
    double mean_h_pred = 0.0;
    for (double v : h_pred.values()) mean_h_pred += v;
    bd.mean_h_pred = mean_h_pred / n;

    if (weights.lambda_ent > 0.0) {
      std::vector<double> targets(static_cast<size_t>(n));
      for (int i = 0; i < n; ++i) targets[static_cast<size_t>(i)] = batch.budgets[static_cast<size_t>(i)].bpp;
      Tensor l_ent = ops::mean_all(hinge_loss(h_pred, targets));
      bd.entropy = l_ent.item();
      loss = ops::add(loss, ops::scale(l_ent, weights.lambda_ent));
    }
    if (weights.lambda_cal > 0.0) {
      CalibrationTargets q = calibration_targets(x0_hat);
      Tensor l_cal = calibration_loss(q, lp);
      bd.calibration = l_cal.item();
      loss = ops::add(loss, ops::scale(l_cal, weights.lambda_cal));
    }
  }

  if (weights.lambda_stop > 0.0) {
    if (!labels) throw std::invalid_argument("total_loss: teacher labels missing");
    std::vector<uint8_t> y(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      uint32_t id = batch.image_ids[static_cast<size_t>(i)];
      if (id >= labels->size()) {
        throw std::invalid_argument("total_loss: teacher labels missing for image");
      }
      const LabelRecord& rec = (*labels)[id];
      int T = static_cast<int>(rec.y.size());
      int t = batch.t[static_cast<size_t>(i)];
      if (t < 1 || t > T) throw std::invalid_argument("total_loss: t outside label range");
      y[static_cast<size_t>(i)] = rec.y[static_cast<size_t>(T - t)];
    }
    Tensor h_stop = h;
    if (stop_budget == "label") {
      std::vector<EntropyBudget> label_budgets;
      label_budgets.reserve(static_cast<size_t>(n));
      for (int i = 0; i < n; ++i) {
        label_budgets.push_back(
            budget_for_image(batch.image_ids[static_cast<size_t>(i)], model.config().budget));
      }
      h_stop = model.embed().forward(label_budgets);
    } else if (stop_budget != "target") {
      throw std::invalid_argument("total_loss: stop_budget must be 'label' or 'target'");
    }
    Tensor p = stop_probability(model, out, batch.t, h_stop);
    Tensor l_stop = stop_loss(y, p);
    bd.stop = l_stop.item();
    loss = ops::add(loss, ops::scale(l_stop, weights.lambda_stop));
  }

  bd.total = loss.item();
  if (breakdown) *breakdown = bd;
  return loss;
}

std::vector<LabelRecord> build_label_records(const Model& model, int count,
                                             uint64_t label_seed, double beta,
                                             double gamma) {
  std::vector<LabelRecord> records;
  records.reserve(static_cast<size_t>(count));
  RngStream base(label_seed);
  for (int i = 0; i < count; ++i) {
    uint32_t id = static_cast<uint32_t>(i);
    EntropyBudget budget = budget_for_image(id, model.config().budget);
    CostTrajectory traj =
        record_trajectory(model, budget, base.fork(id + 1).seed(), beta, gamma);
    StopLabels labels = teacher_labels(traj);
    LabelRecord rec;
    rec.image_id = id;
    rec.cost.reserve(traj.steps.size());
    for (const auto& e : traj.steps) rec.cost.push_back(e.total);
    rec.y = std::move(labels.y);
    records.push_back(std::move(rec));
  }
  return records;
}

namespace {

Tensor batch_from_images(const std::vector<ImageU8>& dataset,
                         const std::vector<uint32_t>& ids) {
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  int h = dataset[0].height, w = dataset[0].width;
  Tensor x0 = Tensor::zeros({static_cast<int>(ids.size()), 1, h, w});
  for (size_t i = 0; i < ids.size(); ++i) {
    const ImageU8& img = dataset[ids[i]];
    if (img.height != h || img.width != w) {
      throw std::invalid_argument("train: dataset images differ in size");
    }
    double* dst = x0.data() + static_cast<size_t>(i) * h * w;
    for (size_t p = 0; p < img.pixels.size(); ++p) {
      dst[p] = 2.0 * img.pixels[p] / 255.0 - 1.0;
    }
  }
  return x0;
}

}  // namespace

void train(Model& model, AdamState& adam, TrainerRng& rng, int64_t& iteration,
           const TrainConfig& cfg, const PolicyRunConfig& policy_cfg,
           const std::vector<ImageU8>& dataset, std::vector<LabelRecord>& labels,
           const std::string& metrics_csv, const std::string& checkpoint_path,
           const std::string& config_text, const TrainHooks& hooks) {
  if (cfg.weights.lambda_stop > 0.0 && labels.empty() && iteration < cfg.iterations) {
    throw std::invalid_argument("train: teacher label cache required (run `labels` first)");
  }
  std::ofstream metrics;
  if (!metrics_csv.empty()) {
    bool fresh = iteration == 0;
    metrics.open(metrics_csv, fresh ? std::ios::trunc : std::ios::app);
    if (!metrics) throw format_error("cannot open metrics csv: " + metrics_csv);
    if (fresh) {
      metrics << "iter,L_total,L_den,L_ent,L_cal,L_stop,mean_H_pred,mean_H_target\n";
    }
  }

  int refresh_at = cfg.refresh_labels ? cfg.iterations / 2 : -1;
  int n = cfg.batch_size;
  while (iteration < cfg.iterations) {
    if (iteration == refresh_at) {
      labels = build_label_records(model, static_cast<int>(dataset.size()),
                                   policy_cfg.label_seed + 1, policy_cfg.label_beta,
                                   policy_cfg.label_gamma);
    }
    TrainingBatch batch;
    batch.image_ids.resize(static_cast<size_t>(n));
    batch.t.resize(static_cast<size_t>(n));
    batch.budgets.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      batch.image_ids[static_cast<size_t>(i)] =
          static_cast<uint32_t>(rng.data.uniform_index(dataset.size()));
      batch.t[static_cast<size_t>(i)] =
          1 + static_cast<int>(rng.timestep.uniform_index(
                  static_cast<uint64_t>(model.schedule().T)));
      batch.budgets[static_cast<size_t>(i)] =
          sample_budget(rng.budget, model.config().budget);
    }
    batch.x0 = batch_from_images(dataset, batch.image_ids);
    batch.eps = Tensor::randn(batch.x0.shape(), rng.noise);

    model.params().zero_grads();
    LossBreakdown bd;
    Tensor loss = total_loss(model, batch, cfg.weights,
                             labels.empty() ? nullptr : &labels, cfg.stop_budget, &bd);
    if (!std::isfinite(bd.total)) {
      throw numeric_error("train: non-finite loss at iteration " +
                          std::to_string(iteration));
    }
    loss.backward();
    adam.step(model.params());
    ++iteration;

    if (metrics.is_open()) {
      metrics.precision(12);
      metrics << iteration << ',' << bd.total << ',' << bd.denoise << ','
              << bd.entropy << ',' << bd.calibration << ',' << bd.stop << ','
              << bd.mean_h_pred << ',' << bd.mean_h_target << '\n';
    }
    if (!checkpoint_path.empty() && iteration % cfg.checkpoint_every == 0) {
      save_checkpoint(checkpoint_path, config_text, model, adam, rng, iteration);
    }
    if (hooks.on_iteration) hooks.on_iteration(iteration, bd);
  }
  // always leave a final snapshot, including the 0-iteration case
  if (!checkpoint_path.empty()) {
    save_checkpoint(checkpoint_path, config_text, model, adam, rng, iteration);
  }
  if (metrics.is_open()) metrics.flush();
}

}  // namespace badiff
