// badiff command-line interface: dataset generation, teacher labels,
// training, adaptive sampling, bitstream encode/decode, budget-sweep
// evaluation, and the finite-difference gradient suites.
//
// Exit codes: 0 success, 1 usage error, 2 data/format error,
// 3 numerical failure, 4 acceptance-check failure.

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <thread>

#include "CLI11.hpp"
#include "badiff/codec.hpp"
#include "badiff/config.hpp"
#include "badiff/dataset.hpp"
#include "badiff/gradcheck.hpp"
#include "badiff/ops.hpp"
#include "badiff/policy.hpp"
#include "badiff/training.hpp"

namespace fs = std::filesystem;
using namespace badiff;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitCheck = 4;

int thread_count() {
  const char* env = std::getenv("BADIFF_THREADS");
  if (!env) return 0;
  int n = std::atoi(env);
  return n < 0 ? 0 : n;
}

// run one job per index, deterministically ordered results
template <typename Fn>
void for_each_index(int count, Fn&& fn) {
  int threads = thread_count();
  if (threads <= 1 || count <= 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int i = next.fetch_add(1); i < count; i = next.fetch_add(1)) fn(i);
  };
  std::vector<std::thread> pool;
  int n = std::min(threads, count);
  pool.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
}

Config load_config(const std::string& path) {
  return path.empty() ? Config() : Config::from_file(path);
}

struct LoadedModel {
  Config config;
  std::unique_ptr<Model> model;
  LoadedCheckpoint state;
};

LoadedModel load_model(const std::string& ckpt_path) {
  LoadedModel lm;
  lm.config = Config::from_text(peek_checkpoint_config(ckpt_path));
  lm.model = std::make_unique<Model>(lm.config.model_config());
  lm.state = load_checkpoint(ckpt_path, *lm.model);
  return lm;
}

std::vector<ImageU8> load_manifest(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw format_error("cannot open manifest: " + manifest_path);
  fs::path base = fs::path(manifest_path).parent_path();
  std::vector<ImageU8> images;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    fs::path p(line);
    if (p.is_relative()) p = base / p;
    images.push_back(read_pgm(p.string()));
  }
  if (images.empty()) throw format_error("manifest lists no images: " + manifest_path);
  return images;
}

// generated deliverables are snapped to the codec's symbol alphabet so a
// written sample is exactly what a receiver can reconstruct
ImageU8 snap_to_bins(const Tensor& image) {
  SymbolGrid grid = quantize_to_bins(image);
  return from_model_range(dequantize_grid(grid));
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  auto ranks = [](const std::vector<double>& v) {
    size_t n = v.size();
    std::vector<size_t> idx(n);
    for (size_t i = 0; i < n; ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](size_t x, size_t y) { return v[x] < v[y]; });
    std::vector<double> r(n);
    size_t i = 0;
    while (i < n) {
      size_t j = i;
      while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
      double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
      for (size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  std::vector<double> ra = ranks(a), rb = ranks(b);
  double ma = 0, mb = 0;
  for (size_t i = 0; i < ra.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= static_cast<double>(ra.size());
  mb /= static_cast<double>(rb.size());
  double cov = 0, va = 0, vb = 0;
  for (size_t i = 0; i < ra.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (va == 0.0 || vb == 0.0) return 0.0;
  return cov / std::sqrt(va * vb);
}

int cmd_gen_data(const std::string& config_path, const std::string& out_dir) {
  Config cfg = load_config(config_path);
  DatasetSpec spec = cfg.dataset_spec();
  fs::create_directories(out_dir);
  auto images = generate(spec);
  std::ofstream manifest(fs::path(out_dir) / "manifest.txt");
  if (!manifest) throw format_error("cannot write manifest in " + out_dir);
  char name[32];
  for (size_t i = 0; i < images.size(); ++i) {
    std::snprintf(name, sizeof(name), "img_%05zu.pgm", i);
    write_pgm(images[i], (fs::path(out_dir) / name).string());
    manifest << name << "\n";
  }
  std::ofstream cfg_out(fs::path(out_dir) / "config.cfg");
  cfg_out << cfg.serialize();
  std::cout << "wrote " << images.size() << " images and manifest.txt to "
            << out_dir << "\n";
  return kExitOk;
}

int cmd_labels(const std::string& config_path, const std::string& ckpt,
               const std::string& out_path) {
  LoadedModel lm = load_model(ckpt);
  Config cfg = config_path.empty() ? lm.config : Config::from_file(config_path);
  PolicyRunConfig pc = cfg.policy_run_config();
  int count = cfg.get_int("data.count");
  auto records = build_label_records(*lm.model, count, pc.label_seed, pc.label_beta,
                                     pc.label_gamma);
  write_label_cache(out_path, records);
  double mean_stop = 0.0;
  for (const auto& r : records) {
    for (size_t i = 0; i < r.y.size(); ++i) {
      if (r.y[i]) {
        mean_stop += static_cast<double>(i + 1);
        break;
      }
    }
  }
  mean_stop /= static_cast<double>(records.size());
  std::cout << "wrote " << records.size() << " label records to " << out_path
            << " (mean first-sufficient step " << mean_stop << ")\n";
  return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& out_dir,
              const std::string& data_manifest, const std::string& labels_path,
              const std::string& resume) {
  fs::create_directories(out_dir);
  Config cfg;
  std::unique_ptr<Model> model;
  AdamState adam;
  TrainerRng rng;
  int64_t iteration = 0;

  if (resume.empty()) {
    cfg = load_config(config_path);
    model = std::make_unique<Model>(cfg.model_config());
    adam = AdamState(model->params(), cfg.train_config().adam);
    rng = TrainerRng::from_seed(cfg.train_config().seed);
  } else {
    LoadedModel lm = load_model(resume);
    cfg = lm.config;
    model = std::move(lm.model);
    adam = AdamState(model->params(), cfg.train_config().adam);
    adam.set_step_count(lm.state.adam_step_count);
    for (size_t i = 0; i < lm.state.adam_m.size(); ++i) {
      adam.moments_m()[i] = lm.state.adam_m[i].second;
      adam.moments_v()[i] = lm.state.adam_v[i].second;
    }
    rng = lm.state.rng;
    iteration = lm.state.iteration;
  }

  TrainConfig tc = cfg.train_config();
  PolicyRunConfig pc = cfg.policy_run_config();
  auto dataset = load_manifest(data_manifest);
  std::vector<LabelRecord> labels;
  if (!labels_path.empty()) labels = read_label_cache(labels_path);

  std::string metrics = (fs::path(out_dir) / "metrics.csv").string();
  std::string ckpt = (fs::path(out_dir) / "checkpoint.bin").string();
  int64_t report_every = std::max<int64_t>(1, tc.iterations / 20);
  TrainHooks hooks;
  hooks.on_iteration = [&](int64_t iter, const LossBreakdown& bd) {
    if (iter % report_every == 0 || iter == tc.iterations) {
      std::cout << "iter " << iter << "  L=" << bd.total << "  den=" << bd.denoise
                << "  ent=" << bd.entropy << "  cal=" << bd.calibration
                << "  stop=" << bd.stop << "  H_pred=" << bd.mean_h_pred << "\n";
    }
  };
  train(*model, adam, rng, iteration, tc, pc, dataset, labels, metrics, ckpt,
        cfg.serialize(), hooks);
  std::cout << "trained to iteration " << iteration << "; checkpoint at " << ckpt
            << "\n";
  return kExitOk;
}

int cmd_sample(const std::string& ckpt, double bpp, int count, uint64_t seed,
               const std::string& out_dir) {
  LoadedModel lm = load_model(ckpt);
  PolicyRunConfig pc = lm.config.policy_run_config();
  fs::create_directories(out_dir);

  struct Row {
    uint64_t seed;
    double predicted_bpp;
    int tau;
    int steps;
    ImageU8 image;
  };
  std::vector<Row> rows(static_cast<size_t>(count));
  for_each_index(count, [&](int i) {
    uint64_t s = seed + static_cast<uint64_t>(i);
    SampleResult res = adaptive_sample(*lm.model, EntropyBudget{bpp}, s, pc.threshold);
    NoGradGuard ng;
    ImageU8 img = snap_to_bins(res.image);
    Tensor snapped = to_model_range(img);
    double predicted = lm.model->entropy().bpp(snapped).values()[0];
    rows[static_cast<size_t>(i)] =
        Row{s, predicted, res.tau, res.steps_executed, std::move(img)};
  });

  std::ofstream csv(fs::path(out_dir) / "samples.csv");
  csv << "seed,target_bpp,predicted_bpp,tau,steps_executed\n";
  csv.precision(10);
  char name[48];
  for (const auto& r : rows) {
    std::snprintf(name, sizeof(name), "sample_%llu.pgm",
                  static_cast<unsigned long long>(r.seed));
    write_pgm(r.image, (fs::path(out_dir) / name).string());
    csv << r.seed << ',' << bpp << ',' << r.predicted_bpp << ',' << r.tau << ','
        << r.steps << '\n';
  }
  std::cout << "wrote " << count << " samples to " << out_dir << "\n";
  return kExitOk;
}

int cmd_encode(const std::string& ckpt, const std::string& image_path, double bpp,
               const std::string& out_path) {
  LoadedModel lm = load_model(ckpt);
  ImageU8 img = read_pgm(image_path);
  Tensor x = to_model_range(img);
  SymbolGrid grid = quantize_to_bins(x);
  Bitstream bs = codec_encode(grid, lm.model->entropy(), EntropyBudget{bpp});
  write_bitstream(bs, out_path);
  NoGradGuard ng;
  double h_phi = lm.model->entropy().bpp(x).values()[0];
  std::cout << "realized_bpp " << bs.realized_bpp() << "\n"
            << "body_bpp " << bs.body_bpp() << "\n"
            << "h_phi " << h_phi << "\n";
  return kExitOk;
}

int cmd_decode(const std::string& ckpt, const std::string& in_path,
               const std::string& out_path) {
  LoadedModel lm = load_model(ckpt);
  Bitstream bs = read_bitstream(in_path);
  SymbolGrid grid = codec_decode(bs, lm.model->entropy());
  if (grid.width == 0 || grid.height == 0) {
    throw format_error("decode: stream carries an empty grid, nothing to write");
  }
  write_pgm(from_model_range(dequantize_grid(grid)), out_path);
  std::cout << "decoded " << grid.width << "x" << grid.height << " image to "
            << out_path << "\n";
  return kExitOk;
}

int cmd_eval(const std::string& ckpt, const std::string& bpp_list, int n,
             uint64_t seed) {
  LoadedModel lm = load_model(ckpt);
  PolicyRunConfig pc = lm.config.policy_run_config();
  std::vector<double> budgets;
  {
    std::stringstream ss(bpp_list);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      if (!tok.empty()) budgets.push_back(std::stod(tok));
    }
  }
  if (budgets.empty()) throw std::invalid_argument("eval: empty --bpp-list");

  int total = static_cast<int>(budgets.size()) * n;
  std::vector<double> target(static_cast<size_t>(total));
  std::vector<double> realized(static_cast<size_t>(total));
  std::vector<double> predicted(static_cast<size_t>(total));
  std::vector<double> taus(static_cast<size_t>(total));
  std::vector<double> steps(static_cast<size_t>(total));

  for_each_index(total, [&](int idx) {
    int bi = idx / n;
    int si = idx % n;
    double bpp = budgets[static_cast<size_t>(bi)];
    uint64_t s = seed + static_cast<uint64_t>(bi) * 1000003ULL +
                 static_cast<uint64_t>(si);
    SampleResult res =
        adaptive_sample(*lm.model, EntropyBudget{bpp}, s, pc.threshold);
    NoGradGuard ng;
    ImageU8 img = snap_to_bins(res.image);
    Tensor snapped = to_model_range(img);
    SymbolGrid grid = quantize_to_bins(snapped);
    Bitstream bs = codec_encode(grid, lm.model->entropy(), EntropyBudget{bpp});
    target[static_cast<size_t>(idx)] = bpp;
    realized[static_cast<size_t>(idx)] = bs.body_bpp();
    predicted[static_cast<size_t>(idx)] =
        lm.model->entropy().bpp(snapped).values()[0];
    taus[static_cast<size_t>(idx)] = res.tau;
    steps[static_cast<size_t>(idx)] = res.steps_executed;
  });

  std::cout << "budget,mean_realized_bpp,mean_predicted_bpp,mean_abs_dev,mean_tau,"
               "mean_steps\n";
  double dev_sum = 0.0, tau_sum = 0.0;
  for (size_t bi = 0; bi < budgets.size(); ++bi) {
    double r = 0, p = 0, d = 0, tt = 0, st = 0;
    for (int si = 0; si < n; ++si) {
      size_t idx = bi * static_cast<size_t>(n) + static_cast<size_t>(si);
      r += realized[idx];
      p += predicted[idx];
      d += std::abs(realized[idx] - target[idx]);
      tt += taus[idx];
      st += steps[idx];
    }
    std::cout << budgets[bi] << ',' << r / n << ',' << p / n << ',' << d / n << ','
              << tt / n << ',' << st / n << "\n";
    dev_sum += d;
    tau_sum += tt;
  }
  double rho = spearman(target, realized);
  std::cout << "mean_abs_bpp_deviation " << dev_sum / total << "\n"
            << "mean_tau " << tau_sum / total << "\n"
            << "spearman_target_realized " << rho << "\n";
  return kExitOk;
}

int cmd_grad_check(const std::string& scope) {
  struct Item {
    std::string name;
    double max_rel_err;
    double tolerance;
  };
  std::vector<Item> items;
  auto add = [&](const std::string& name, const GradCheckReport& rep, double tol) {
    items.push_back({name, rep.max_rel_err, tol});
  };

  if (scope == "numerics" || scope == "full") {
    RngStream rng(1001);
    Tensor x = Tensor::randn({2, 4}, rng);
    Tensor w = Tensor::randn({3, 4}, rng, 0.5);
    Tensor b = Tensor::randn({3}, rng, 0.5);
    add("dense",
        check_gradients([&] { return ops::sum_all(ops::silu(ops::dense(x, w, b))); },
                        {{"x", x}, {"w", w}, {"b", b}}),
        1e-6);

    Tensor cx = Tensor::randn({1, 1, 5, 5}, rng);
    Tensor ck = Tensor::randn({2, 1, 3, 3}, rng, 0.4);
    Tensor cb = Tensor::randn({2}, rng, 0.2);
    add("conv2d",
        check_gradients(
            [&] { return ops::mean_all(ops::square(ops::conv2d(cx, ck, cb, 1, 1))); },
            {{"x", cx}, {"k", ck}, {"b", cb}}),
        1e-6);

    Tensor mx = Tensor::randn({1, 1, 6, 6}, rng);
    Tensor mk = Tensor::randn({2, 1, 5, 5}, rng, 0.3);
    Tensor mb = Tensor::randn({2}, rng, 0.3);
    Tensor mask = ops::make_causal_mask(5, 5);
    add("masked_conv2d",
        check_gradients(
            [&] {
              return ops::mean_all(ops::square(ops::masked_conv2d(mx, mk, mb, mask)));
            },
            {{"x", mx}, {"k", mk}, {"b", mb}}),
        1e-6);

    Tensor gx = Tensor::randn({2, 4, 3, 3}, rng);
    Tensor gg = Tensor::full({4}, 1.0);
    Tensor gb = Tensor::zeros({4});
    Tensor gw = Tensor::randn({2, 4, 3, 3}, rng);
    add("group_norm",
        check_gradients(
            [&] {
              return ops::sum_all(
                  ops::mul(ops::group_norm(gx, gg, gb, 2), gw.detach()));
            },
            {{"x", gx}, {"g", gg}, {"b", gb}}),
        1e-5);

    Tensor ax = Tensor::randn({2, 4, 3, 3}, rng, 0.5);
    Tensor aq = Tensor::randn({4, 4}, rng, 0.5);
    Tensor ak = Tensor::randn({4, 4}, rng, 0.5);
    Tensor av = Tensor::randn({4, 4}, rng, 0.5);
    add("attention2d",
        check_gradients(
            [&] {
              return ops::mean_all(ops::square(ops::attention2d(ax, aq, ak, av)));
            },
            {{"x", ax}, {"wq", aq}, {"wk", ak}, {"wv", av}}),
        1e-5);
  }

  ModelConfig small;
  small.denoiser.levels = {4, 8};
  small.denoiser.blocks_per_level = 1;
  small.denoiser.time_embed_dim = 8;
  small.denoiser.entropy_embed_dim = 16;
  small.denoiser.groups = 2;
  small.entropy.hyper_channels = 6;
  small.entropy.hyper_latent_channels = 4;
  small.entropy.context_channels = 6;
  small.entropy.fuse_channels = 8;
  small.policy.hidden = {16, 8};
  small.embed_hidden = 16;
  small.schedule_steps = 12;
  small.beta_start = 0.01;
  small.beta_end = 0.3;
  small.image_size = 8;
  small.init_seed = 2024;

  if (scope == "entropy" || scope == "full") {
    Model model(small);
    model.set_soft_bin_tau(0.0);
    RngStream rng(1002);
    Tensor x = Tensor::zeros({1, 1, 8, 8});
    for (double& v : x.values()) v = rng.uniform(-1.0, 1.0);
    std::vector<std::pair<std::string, Tensor>> entropy_params;
    for (auto& p : model.params().list()) {
      if (p.name.rfind("entropy.", 0) == 0) entropy_params.emplace_back(p.name, p.tensor);
    }
    add("entropy_bpp",
        check_gradients(
            [&] {
              LogisticParams lp = model.entropy().predict_params(x);
              return ops::mean_all(entropy_bpp(x, lp, 0.0));
            },
            entropy_params, 1e-5, 50, 11),
        1e-4);
    CalibrationTargets q = calibration_targets(x);
    add("calibration_loss",
        check_gradients(
            [&] {
              LogisticParams lp = model.entropy().predict_params(x);
              return calibration_loss(q, lp);
            },
            entropy_params, 1e-5, 50, 12),
        1e-4);
  }

  if (scope == "policy" || scope == "full") {
    Model model(small);
    RngStream hr(1003);
    for (auto& p : model.params().list()) {
      if (p.name.rfind("policy.", 0) == 0) {
        for (double& v : p.tensor.values()) v = 0.3 * hr.normal();
      }
    }
    RngStream rng(1004);
    Tensor x = Tensor::randn({2, 1, 8, 8}, rng);
    std::vector<int> ts{3, 9};
    std::vector<EntropyBudget> budgets{{0.5}, {1.5}};
    std::vector<std::pair<std::string, Tensor>> pol_params;
    for (auto& p : model.params().list()) {
      if (p.name.rfind("policy.", 0) == 0 || p.name.rfind("embed.", 0) == 0) {
        pol_params.emplace_back(p.name, p.tensor);
      }
    }
    add("stop_probability",
        check_gradients(
            [&] {
              Tensor h = model.embed().forward(budgets);
              auto out = model.denoiser().forward(x, ts, h);
              Tensor p = stop_probability(model, out, ts, h);
              return ops::mean_all(ops::square(p));
            },
            pol_params, 1e-5, 40, 13),
        1e-5);
  }

  if (scope == "full") {
    Model model(small);
    model.set_soft_bin_tau(0.0);
    RngStream hr(1005);
    for (auto& p : model.params().list()) {
      if (p.name.find("film.w") != std::string::npos ||
          p.name.find("head.w") != std::string::npos ||
          p.name.rfind("policy.", 0) == 0) {
        for (double& v : p.tensor.values()) v = 0.05 * hr.normal();
      }
    }
    DatasetSpec spec{4, 8, 0.5, 77};
    auto data = generate(spec);
    auto labels = build_label_records(model, 4, 88, 1.0, 0.002);
    TrainerRng rng = TrainerRng::from_seed(1006);
    TrainingBatch batch;
    int n = 2;
    batch.image_ids = {0, 2};
    batch.t = {3, 9};
    batch.budgets = {{0.6}, {1.4}};
    batch.x0 = Tensor::zeros({n, 1, 8, 8});
    for (int i = 0; i < n; ++i) {
      const ImageU8& img = data[batch.image_ids[static_cast<size_t>(i)]];
      for (size_t p = 0; p < img.pixels.size(); ++p) {
        batch.x0.data()[static_cast<size_t>(i) * 64 + p] = 2.0 * img.pixels[p] / 255.0 - 1.0;
      }
    }
    batch.eps = Tensor::randn(batch.x0.shape(), rng.noise);
    LossWeights weights{0.1, 1e-3, 1e-2};
    add("total_loss",
        check_gradients(
            [&] { return total_loss(model, batch, weights, &labels, "label", nullptr); },
            model.params(), 1e-5, 15, 14),
        1e-4);
  }

  if (items.empty()) {
    throw std::invalid_argument("grad-check: scope must be numerics|entropy|policy|full");
  }
  bool ok = true;
  for (const auto& item : items) {
    bool pass = item.max_rel_err < item.tolerance;
    ok = ok && pass;
    std::cout << (pass ? "PASS" : "FAIL") << "  " << item.name << "  max_rel_err "
              << item.max_rel_err << "  (tolerance " << item.tolerance << ")\n";
  }
  return ok ? kExitOk : kExitCheck;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bandwidth-adaptive diffusion: training, sampling, and coding"};
  app.require_subcommand(1);

  std::string config_path, out_dir, ckpt, out_path, data_manifest, labels_path;
  std::string image_path, in_path, bpp_list = "0.3,0.6,1.0,1.5", scope = "full";
  std::string resume;
  double bpp = 1.0;
  int count = 1, n_per_budget = 16;
  uint64_t seed = 1;

  auto* gen = app.add_subcommand("gen-data", "emit a procedural PGM dataset + manifest");
  gen->add_option("--config", config_path, "flat config file");
  gen->add_option("--out-dir", out_dir, "output directory")->required();

  auto* labels = app.add_subcommand("labels", "write the offline teacher-label cache");
  labels->add_option("--config", config_path, "flat config file");
  labels->add_option("--ckpt", ckpt, "model checkpoint")->required();
  labels->add_option("--out", out_path, "label cache path")->required();

  auto* train_cmd = app.add_subcommand("train", "run training; writes checkpoint + metrics CSV");
  train_cmd->add_option("--config", config_path, "flat config file");
  train_cmd->add_option("--out-dir", out_dir, "output directory")->required();
  train_cmd->add_option("--data", data_manifest, "dataset manifest")->required();
  train_cmd->add_option("--labels", labels_path, "teacher label cache");
  train_cmd->add_option("--resume", resume, "resume from this checkpoint");

  auto* sample = app.add_subcommand("sample", "adaptive sampling; writes PGMs + CSV");
  sample->add_option("--ckpt", ckpt, "model checkpoint")->required();
  sample->add_option("--bpp", bpp, "target bits-per-pixel")->required();
  sample->add_option("--count", count, "number of samples");
  sample->add_option("--seed", seed, "base seed");
  sample->add_option("--out-dir", out_dir, "output directory")->required();

  auto* encode = app.add_subcommand("encode", "encode a PGM to a bitstream");
  encode->add_option("--ckpt", ckpt, "model checkpoint")->required();
  encode->add_option("--image", image_path, "input PGM")->required();
  encode->add_option("--bpp", bpp, "target bits-per-pixel recorded in the header");
  encode->add_option("--out", out_path, "output bitstream")->required();

  auto* decode = app.add_subcommand("decode", "decode a bitstream to a PGM");
  decode->add_option("--ckpt", ckpt, "model checkpoint")->required();
  decode->add_option("--in", in_path, "input bitstream")->required();
  decode->add_option("--out", out_path, "output PGM")->required();

  auto* eval = app.add_subcommand("eval", "sweep budgets, report bpp adherence + stopping");
  eval->add_option("--ckpt", ckpt, "model checkpoint")->required();
  eval->add_option("--bpp-list", bpp_list, "comma-separated budgets");
  eval->add_option("--n", n_per_budget, "samples per budget");
  eval->add_option("--seed", seed, "base seed");

  auto* gc = app.add_subcommand("grad-check", "finite-difference gradient suites");
  gc->add_option("--scope", scope, "numerics|entropy|policy|full");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(config_path, out_dir);
    if (labels->parsed()) return cmd_labels(config_path, ckpt, out_path);
    if (train_cmd->parsed()) {
      return cmd_train(config_path, out_dir, data_manifest, labels_path, resume);
    }
    if (sample->parsed()) return cmd_sample(ckpt, bpp, count, seed, out_dir);
    if (encode->parsed()) return cmd_encode(ckpt, image_path, bpp, out_path);
    if (decode->parsed()) return cmd_decode(ckpt, in_path, out_path);
    if (eval->parsed()) return cmd_eval(ckpt, bpp_list, n_per_budget, seed);
    if (gc->parsed()) return cmd_grad_check(scope);
  } catch (const format_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const numeric_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
