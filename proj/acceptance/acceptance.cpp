// Acceptance run: one PASS/FAIL line per criterion, then a nonzero exit if
// any criterion failed. Trained models are cached under GP_ACCEPTANCE_DIR.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "app.hpp"
#include "gp/datasets.hpp"
#include "gp/format.hpp"
#include "gp/gp_engine.hpp"
#include "gp/metrics.hpp"
#include "gp/model_io.hpp"
#include "gp/network.hpp"
#include "gp/random.hpp"

using namespace gp;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

// Initialization seed of the frozen toy benchmark model.
constexpr const char* kToySeed = "2";
constexpr const char* kMnistSeed = "1";

const fs::path kWork = GP_ACCEPTANCE_DIR;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::vector<std::string> g_manifests;

void run_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  std::cerr << out.str();
  if (code != 0) {
    std::string joined;
    for (const auto& a : args) joined += a + " ";
    throw std::runtime_error("gpcli " + joined + "failed (" + std::to_string(code) + "): " + err.str());
  }
  for (std::size_t i = 0; i + 1 < args.size(); ++i) {
    if (args[i] == "--out-dir") g_manifests.push_back((fs::path(args[i + 1]) / "manifest.json").string());
  }
}

using Table = std::vector<std::map<std::string, std::string>>;

Table read_csv(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  std::string line;
  std::getline(in, line);
  std::vector<std::string> header;
  {
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) header.push_back(cell);
  }
  Table rows;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string cell;
    std::map<std::string, std::string> row;
    for (const auto& h : header) {
      if (!std::getline(ls, cell, ',')) cell.clear();
      row[h] = cell;
    }
    rows.push_back(row);
  }
  return rows;
}

double num(const std::map<std::string, std::string>& row, const std::string& key) {
  return std::stod(row.at(key));
}

std::string pts(double v) { return format_real(100.0 * v, 4); }

// --- toy benchmark ------------------------------------------------------------

fs::path toy_model() {
  const fs::path dir = kWork / "toy_model";
  if (!fs::exists(dir / "model.gpn")) {
    run_cli({"train", "--arch", "toyfcn", "--dataset", "synthetic:train", "--heldout",
             "synthetic:val", "--seed", kToySeed, "--out-dir", dir.string()});
  }
  return dir / "model.gpn";
}

struct Sweep {
  std::vector<double> eps;
  std::vector<double> miou;
  double baseline = 0.0;
  double at(double e) const {
    for (std::size_t i = 0; i < eps.size(); ++i) {
      if (std::abs(eps[i] - e) < 1e-9) return miou[i];
    }
    throw std::runtime_error("epsilon " + format_real(e) + " not in sweep");
  }
};

Sweep load_sweep(const fs::path& csv) {
  Sweep s;
  for (const auto& r : read_csv(csv)) {
    s.eps.push_back(num(r, "epsilon"));
    s.miou.push_back(num(r, "mean_iou"));
  }
  s.baseline = s.at(0.0);
  return s;
}

// --- criteria -----------------------------------------------------------------

Network random_micro_net(Rng& rng, int which) {
  std::vector<Layer> layers;
  Shape in;
  if (which % 2 == 0) {
    in = {2, 8, 8};
    layers.push_back(make_conv("conv1", 2, 3, 3, 1, 1));
    layers.push_back(make_relu("relu1"));
    layers.push_back(make_pool("pool1"));
    layers.push_back(make_conv("conv2", 3, 3, 3, 1, 1));
    layers.push_back(make_upsample("up", 8, 8));
  } else {
    in = {1, 8, 8};
    layers.push_back(make_conv("conv1", 1, 2, 3));
    layers.push_back(make_pool("pool1"));
    layers.push_back(make_relu("relu1"));
    layers.push_back(make_flatten("flat"));
    layers.push_back(make_linear("ip1", 18, 6));
    layers.push_back(make_relu("ip1_relu"));
    layers.push_back(make_linear("ip2", 6, 4));
  }
  Network net(in, std::move(layers));
  for (std::size_t i = 0; i < net.size(); ++i) {
    auto& op = net.mutable_layer(i).op;
    const auto fill = [&](Tensor& t) {
      for (auto& v : t.values()) v = uniform(rng, -0.5, 0.5);
    };
    if (auto* c = std::get_if<Conv2d>(&op)) {
      fill(c->weight);
      fill(c->bias);
    } else if (auto* l = std::get_if<Linear>(&op)) {
      fill(l->weight);
      fill(l->bias);
    }
  }
  return net;
}

Tensor random_tensor(const Shape& s, Rng& rng) {
  Tensor t(s);
  for (auto& v : t.values()) v = uniform(rng, -1.0, 1.0);
  return t;
}

double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

Verdict c1_gradients() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::size_t coords = 0;
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    Rng rng(mix_seed(seed, 101));
    const Network net = random_micro_net(rng, static_cast<int>(seed));
    const auto x = random_tensor(net.input_shape(), rng);
    const auto s = random_tensor(net.output_shape(), rng);
    const auto g = backward_from_seed(net, forward(net, x), s).input_grad;
    for (std::size_t i = 0; i < x.size(); ++i) {
      Tensor xp = x, xm = x;
      xp[i] += 1e-5;
      xm[i] -= 1e-5;
      const double fd = (dot(evaluate(net, xp), s) - dot(evaluate(net, xm), s)) / 2e-5;
      const double err = std::abs(g[i] - fd) / std::max({std::abs(g[i]), std::abs(fd), 1e-6});
      worst = std::max(worst, err);
      ++coords;
    }
  }
  const double secs = since(t0);
  return {worst <= 1e-4 && secs < 60.0,
          "6 micro-nets, " + std::to_string(coords) + " input coords, max rel err " +
              format_real(worst, 3) + ", " + format_real(secs, 3) + " s"};
}

Verdict c2_seed_reduction() {
  Rng rng(202);
  double worst_onehot = 0.0, worst_sum = 0.0;
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t c = 2 + uniform_index(rng, 20);
    Tensor z({c});
    for (auto& v : z.values()) v = uniform(rng, -6.0, 6.0);
    const auto y = softmax(z);
    const std::size_t k = uniform_index(rng, c);
    Tensor l({c});
    l[k] = 1.0;
    const auto g = softmax_seed_gradient(y, {l});
    for (std::size_t i = 0; i < c; ++i) {
      const double expected = y.probs[k] * ((i == k ? 1.0 : 0.0) - y.probs[i]);
      worst_onehot = std::max(worst_onehot, std::abs(g[i] - expected));
    }
    // Arbitrary valid l over a [c,2,2] map.
    Tensor zz({c, 2, 2}), lz({c, 2, 2});
    for (auto& v : zz.values()) v = uniform(rng, -6.0, 6.0);
    for (auto& v : lz.values()) v = uniform(rng, -3.0, 3.0);
    const auto gy = softmax_seed_gradient(softmax(zz), softmax(lz));
    for (std::size_t p = 0; p < 4; ++p) {
      double s = 0.0;
      for (std::size_t ch = 0; ch < c; ++ch) s += gy[ch * 4 + p];
      worst_sum = std::max(worst_sum, std::abs(s));
    }
  }
  return {worst_onehot <= 1e-12 && worst_sum <= 1e-12,
          "10^4 pairs, one-hot max err " + format_real(worst_onehot, 3) + ", max |sum| " +
              format_real(worst_sum, 3)};
}

Verdict c3_miou_oracle() {
  Rng rng(303);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    LabelMap gt(8, 8), pred(8, 8);
    for (auto& v : gt.labels) v = static_cast<std::int32_t>(uniform_index(rng, 4));
    for (auto& v : pred.labels) v = static_cast<std::int32_t>(uniform_index(rng, 4));
    ConfusionMatrix cm(4);
    cm.accumulate(gt, pred);
    double sum = 0.0;
    int present = 0;
    for (std::int32_t c = 0; c < 4; ++c) {
      std::vector<std::size_t> a, b, inter, uni;
      for (std::size_t p = 0; p < 64; ++p) {
        if (gt.labels[p] == c) a.push_back(p);
        if (pred.labels[p] == c) b.push_back(p);
      }
      std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(inter));
      std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(uni));
      if (uni.empty()) continue;
      sum += static_cast<double>(inter.size()) / static_cast<double>(uni.size());
      ++present;
    }
    worst = std::max(worst, std::abs(cm.mean_iou() - sum / present));
  }
  return {worst <= 1e-12, "100 pairs, max |diff| " + format_real(worst, 3)};
}

struct ToyRuns {
  Sweep sweep;
  double sweep_seconds = 0.0;
  double tuned_eps = 0.0;
};

Verdict c4_corrective(ToyRuns& runs) {
  const auto model = toy_model();
  const fs::path dir = kWork / "c4_sweep";
  const auto t0 = Clock::now();
  run_cli({"sweep-eps", "--model", model.string(), "--dataset", "synthetic:val", "--eps-grid",
           "-1:1:0.05", "--out-dir", dir.string()});
  runs.sweep_seconds = since(t0);
  runs.sweep = load_sweep(dir / "sweep.csv");
  const auto& s = runs.sweep;
  double best_gain = -1.0, best_eps = 0.0, mirror = 0.0;
  bool found = false;
  for (std::size_t i = 0; i < s.eps.size(); ++i) {
    if (!(s.eps[i] > 0.0)) continue;
    const double gain = s.miou[i] - s.baseline;
    const double loss = s.at(-s.eps[i]) - s.baseline;
    const bool ok = gain >= 0.005 && loss <= -0.005;
    if (gain > best_gain) {
      best_gain = gain;
      best_eps = s.eps[i];
      mirror = loss;
    }
    found |= ok;
  }
  runs.tuned_eps = best_eps;
  return {found && runs.sweep_seconds < 600.0,
          "baseline mIoU " + pts(s.baseline) + ", best eps " + format_real(best_eps) + ": " +
              (best_gain >= 0 ? "+" : "") + pts(best_gain) + " pts, at -eps " + pts(mirror) +
              " pts; sweep " + format_real(runs.sweep_seconds, 3) + " s"};
}

struct Ablation {
  std::map<std::string, double> best;
  std::map<std::string, std::map<double, double>> grid;
};

Ablation run_ablation() {
  const fs::path dir = kWork / "c5_c7_ablate";
  run_cli({"ablate-variants", "--model", toy_model().string(), "--dataset", "synthetic:val",
           "--eps-grid", "-1:1:0.05", "--out-dir", dir.string()});
  Ablation a;
  for (const auto& r : read_csv(dir / "ablate.csv")) a.best[r.at("variant")] = num(r, "best_mean_iou");
  for (const auto& r : read_csv(dir / "ablate_grid.csv")) {
    a.grid[r.at("variant")][std::round(num(r, "epsilon") * 1e6) / 1e6] = num(r, "mean_iou");
  }
  return a;
}

Verdict c5_oracle(const ToyRuns& runs, const Ablation& a) {
  const double e = std::round(runs.tuned_eps * 1e6) / 1e6;
  const double oracle = a.grid.at("ground_truth_oracle").at(e);
  const double gp = a.grid.at("gp_onehot").at(e);
  return {oracle >= gp, "at eps " + format_real(e) + ": oracle " + pts(oracle) + " vs gp_onehot " + pts(gp)};
}

Verdict c6_iterations(const ToyRuns& runs) {
  const fs::path dir = kWork / "c6_iterations";
  run_cli({"sweep-eps", "--model", toy_model().string(), "--dataset", "synthetic:val", "--eps",
           format_real(runs.tuned_eps), "--iterations", "3", "--no-plot", "--out-dir", dir.string()});
  const double it3 = num(read_csv(dir / "sweep.csv").at(0), "mean_iou");
  const double it0 = runs.sweep.baseline;
  const double it1 = runs.sweep.at(runs.tuned_eps);
  return {it3 - it1 <= it1 - it0, "eps " + format_real(runs.tuned_eps) + ": iter0 " + pts(it0) +
                                       ", iter1 " + pts(it1) + ", iter3 " + pts(it3)};
}

Verdict c7_variants(const Ablation& a) {
  const double gp = a.best.at("gp_onehot");
  const bool ok = gp >= a.best.at("top2_label") && gp >= a.best.at("uniform_label") &&
                  gp >= a.best.at("random_onehot");
  std::string detail;
  for (const auto& [name, v] : a.best) detail += name + " " + pts(v) + ", ";
  detail.resize(detail.size() - 2);
  return {ok, detail};
}

Verdict c8_truncation() {
  const fs::path dir = kWork / "c8_truncate";
  run_cli({"truncate-bench", "--model", toy_model().string(), "--dataset", "synthetic:val",
           "--out-dir", dir.string()});
  const auto summary = read_csv(dir / "truncate.csv");
  const auto timing = read_csv(dir / "truncate_timing.csv");
  bool ok = summary.size() >= 2 && summary.size() == timing.size();
  std::string detail;
  for (std::size_t i = 0; i < summary.size() && i < timing.size(); ++i) {
    const double miou = num(summary[i], "mean_iou");
    const double base = num(summary[i], "baseline_mean_iou");
    const double t = num(timing[i], "mean_total_s");
    if (summary[i].at("layer") != "INPUT") ok &= miou >= base;
    if (i > 0) ok &= t < num(timing[i - 1], "mean_total_s");
    detail += summary[i].at("layer") + " " + pts(miou) + "@" + summary[i].at("best_epsilon") + " " +
              format_real(1000.0 * t, 3) + "ms; ";
  }
  if (!summary.empty()) detail += "baseline " + pts(num(summary[0], "baseline_mean_iou"));
  return {ok, detail};
}

// Wall time a cached stage took when it was produced.
double recorded_seconds(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  return nlohmann::json::parse(in).at("timing").at("total_s").get<double>();
}

Verdict c9_mnist() {
  const fs::path data = GP_MNIST_DIR;
  if (!fs::exists(data / "t10k-images-idx3-ubyte") || !fs::exists(data / "train-images-idx3-ubyte")) {
    return {false, "MNIST IDX files not found in " + data.string() + " (scripts/fetch_mnist.sh)"};
  }
  const fs::path train_dir = kWork / "mnist_model";
  if (!fs::exists(train_dir / "model.gpn")) {
    run_cli({"train", "--arch", "mnist", "--dataset", "mnist-train:" + data.string(), "--seed",
             kMnistSeed, "--out-dir", train_dir.string()});
  }
  const fs::path index_dir = kWork / "mnist_index";
  if (!fs::exists(index_dir / "model_index.gpn")) {
    run_cli({"build-index", "--model", (train_dir / "model.gpn").string(), "--dataset",
             "mnist-train:" + data.string(), "--out-dir", index_dir.string()});
  }
  const fs::path knn_dir = kWork / "c9_knn";
  run_cli({"knn-eval", "--model", (index_dir / "model_index.gpn").string(), "--dataset",
           "mnist-test:" + data.string(), "--k", "3", "--out-dir", knn_dir.string()});
  const double secs = recorded_seconds(train_dir) + recorded_seconds(index_dir) +
                      recorded_seconds(knn_dir);
  const auto rows = read_csv(knn_dir / "knn.csv");
  const double base = num(rows.at(0), "accuracy_before");
  const auto* best = &rows.at(0);
  for (const auto& r : rows) {
    if (num(r, "accuracy_after") > num(*best, "accuracy_after")) best = &r;
  }
  const double after = num(*best, "accuracy_after");
  const double corrected = num(*best, "corrected");
  const bool ok = base >= 0.985 && after >= base - 0.001 && corrected >= 1 && secs <= 1800.0;
  return {ok, "baseline " + pts(base) + "%, GP-kNN best eps " + best->at("epsilon") + ": " +
                  pts(after) + "% (" + best->at("corrected") + " corrected, " +
                  best->at("corrupted") + " corrupted); " + format_real(secs, 4) +
                  " s train+index+eval"};
}

Verdict c10_determinism() {
  int checked = 0, failed = 0;
  std::string which;
  for (const auto& m : g_manifests) {
    if (!fs::exists(m)) continue;
    // Training reruns are covered by a small model; the full ones are cached.
    std::ifstream in(m);
    const std::string text((std::istreambuf_iterator<char>(in)), {});
    if (text.find("\"command\": \"train\"") != std::string::npos) continue;
    const fs::path replay = fs::path(m).parent_path().string() + "_rerun";
    std::ostringstream out, err;
    const int code = cli::run({"rerun", "--manifest", m, "--out-dir", replay.string()}, out, err);
    ++checked;
    if (code != 0) {
      ++failed;
      which += fs::path(m).parent_path().filename().string() + " ";
    }
  }
  // Small training run, replayed.
  const fs::path small = kWork / "c10_train";
  run_cli({"train", "--arch", "toyfcn", "--dataset", "synthetic:77:16", "--epochs", "1", "--seed",
           "5", "--out-dir", small.string()});
  std::ostringstream out, err;
  ++checked;
  if (cli::run({"rerun", "--manifest", (small / "manifest.json").string(), "--out-dir",
                (kWork / "c10_train_rerun").string()},
               out, err) != 0) {
    ++failed;
    which += "c10_train ";
  }
  return {checked > 1 && failed == 0,
          std::to_string(checked) + " manifests replayed, " + std::to_string(failed) +
              " mismatched" + (which.empty() ? "" : " (" + which + ")")};
}

Verdict c11_roundtrips() {
  Rng rng(1111);
  int models = 0, idx = 0;
  bool ok = true;
  for (int trial = 0; trial < 10; ++trial) {
    ModelFile m;
    m.arch = "micro";
    m.net = random_micro_net(rng, trial);
    m.channel_means = {uniform(rng, 0, 255), uniform(rng, 0, 255)};
    if (trial % 2 == 0) {
      FeatureIndex index{"relu1", 2, {}};
      for (int i = 0; i < 4; ++i) {
        index.entries.push_back({{uniform(rng, -1, 1), uniform(rng, -1, 1)}, i, "id" + std::to_string(i)});
      }
      m.index = index;
    }
    const auto path = kWork / "c11_model.gpn";
    save_model(path, m);
    const auto back = load_model(path);
    ok &= back == m && encode_model(back) == read_file_bytes(path);
    ++models;

    IdxImages im;
    im.rows = 1 + uniform_index(rng, 28);
    im.cols = 1 + uniform_index(rng, 28);
    im.pixels.resize((1 + uniform_index(rng, 6)) * im.rows * im.cols);
    for (auto& p : im.pixels) p = static_cast<std::uint8_t>(uniform_index(rng, 256));
    std::vector<std::uint8_t> labels(im.count());
    for (auto& l : labels) l = static_cast<std::uint8_t>(uniform_index(rng, 10));
    const auto ip = kWork / "c11_images.idx", lp = kWork / "c11_labels.idx";
    write_idx_images(ip, im);
    write_idx_labels(lp, labels);
    const auto im2 = read_idx_images(ip);
    ok &= im2.rows == im.rows && im2.cols == im.cols && im2.pixels == im.pixels &&
          read_idx_labels(lp) == labels;
    const auto ip2 = kWork / "c11_images2.idx";
    write_idx_images(ip2, im2);
    ok &= read_file_bytes(ip2) == read_file_bytes(ip);
    ++idx;
  }
  return {ok, std::to_string(models) + " GPN1 models, " + std::to_string(idx) + " IDX image/label pairs"};
}

void report(int n, const std::string& name, const std::function<Verdict()>& check, int& failures) {
  Verdict v;
  try {
    v = check();
  } catch (const std::exception& e) {
    v = {false, std::string("error: ") + e.what()};
  }
  if (!v.pass) ++failures;
  std::cout << "criterion " << n << " " << (v.pass ? "PASS" : "FAIL") << "  " << name << ": "
            << v.detail << std::endl;
}

}  // namespace

int main() {
  fs::create_directories(kWork);
  int failures = 0;
  ToyRuns runs;
  Ablation ablation;
  bool have_ablation = false;
  const auto ablation_once = [&]() -> const Ablation& {
    if (!have_ablation) {
      ablation = run_ablation();
      have_ablation = true;
    }
    return ablation;
  };

  report(1, "gradient correctness", c1_gradients, failures);
  report(2, "seed gradient reduction", c2_seed_reduction, failures);
  report(3, "mIoU oracle", c3_miou_oracle, failures);
  report(4, "corrective direction", [&] { return c4_corrective(runs); }, failures);
  report(5, "oracle dominance", [&] { return c5_oracle(runs, ablation_once()); }, failures);
  report(6, "diminishing iterations", [&] { return c6_iterations(runs); }, failures);
  report(7, "variant ordering", [&] { return c7_variants(ablation_once()); }, failures);
  report(8, "truncation trade-off", c8_truncation, failures);
  report(9, "MNIST pipeline", c9_mnist, failures);
  report(10, "determinism", c10_determinism, failures);
  report(11, "format round-trips", c11_roundtrips, failures);
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
