#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vnt/commands.hpp"

namespace fs = std::filesystem;
using namespace vnt;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
  double seconds = 0.0;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

PointCloud random_cloud(std::size_t n, Rng& rng) {
  Points p(static_cast<Eigen::Index>(n), 3);
  for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = rng.normal();
  return PointCloud(std::move(p));
}

SyntheticClassSpec winged(std::size_t instances, bool posed) {
  SyntheticClassSpec s;
  s.family = ShapeFamily::kWinged;
  s.instances = instances;
  s.points = 1024;
  s.dense_points = 2048;
  s.random_pose = posed;
  return s;
}

// ---------------------------------------------------------------------------
// 1. Equivariance of an untrained model

Outcome equivariance(std::uint64_t seed) {
  AutoEncoder model(ModelConfig{});
  VerifyOptions opt;
  opt.trials = 100;
  opt.seed = seed;
  const auto reports = cmd_verify_equivariance(model, opt);
  std::map<std::string, double> heads;
  std::size_t layer_pass = 0, layers = 0;
  for (const auto& r : reports) {
    if (r.name.rfind("model.", 0) == 0) {
      heads[r.name] = r.max_residual;
    } else {
      ++layers;
      layer_pass += r.passed ? 1 : 0;
    }
  }
  Outcome o;
  o.pass = all_passed(reports);
  for (const auto& [name, res] : heads) o.detail += name.substr(6) + " " + fmt("%.2e", res) + ", ";
  o.detail += std::to_string(layer_pass) + "/" + std::to_string(layers) + " layer contracts";
  return o;
}

// ---------------------------------------------------------------------------
// 2. Stability of untrained and trained models

Outcome stability_of(const AutoEncoder& untrained, const AutoEncoder& trained, std::uint64_t seed) {
  const auto data = generate_class(winged(50, true), seed + 2);
  const double a = evaluate_stability(untrained, data, 10, seed + 3);
  const double b = evaluate_stability(trained, data, 10, seed + 3);
  Outcome o;
  o.pass = a < 0.01 && b < 0.01;
  o.detail = "untrained " + fmt("%.3e", a) + " deg, trained " + fmt("%.3e", b) + " deg (limit 0.01)";
  return o;
}

// ---------------------------------------------------------------------------
// 3. Desk-scale training

struct Trained {
  std::optional<AutoEncoder> model;
  std::vector<EpochMetrics> history;
  double seconds = 0.0;
};

Trained desk_training(std::uint64_t seed, const fs::path& out) {
  const auto data = generate_class(winged(200, true), seed);
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.batch_size = 32;
  cfg.seed = seed;
  Trained t;
  t.model.emplace(ModelConfig{});
  TrainIo io;
  io.out_dir = out / "train";
  io.on_epoch = [](const EpochMetrics& m) { std::cerr << m.to_json().dump() << std::endl; };
  const auto start = std::chrono::steady_clock::now();
  t.history = train(*t.model, data, cfg, io).history;
  t.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return t;
}

Outcome training_outcome(const Trained& t) {
  const double first = t.history.front().rec, last = t.history.back().rec, ortho = t.history.back().ortho;
  Outcome o;
  const bool losses = last <= first / 5.0 && ortho <= 1e-2;
  const bool fast = t.seconds < 30.0 * 60.0;
  o.pass = losses && fast;
  o.detail = "l_rec " + fmt("%.4g", first) + " -> " + fmt("%.4g", last) + " (ratio " + fmt("%.3g", first / last) +
             ", need >= 5), l_ortho " + fmt("%.3e", ortho) + " (limit 1e-2), runtime " + fmt("%.1f", t.seconds / 60.0) +
             " min (target 30)";
  return o;
}

// ---------------------------------------------------------------------------
// 4. Consistency on held-out aligned instances

Outcome consistency_of(const AutoEncoder& untrained, const AutoEncoder& trained, std::uint64_t seed) {
  const auto data = generate_class(winged(50, false), seed + 1);
  const double base = evaluate_consistency(untrained, data).std_degrees;
  const double ours = evaluate_consistency(trained, data).std_degrees;
  Outcome o;
  o.pass = ours < 40.0 && ours < 0.5 * base;
  o.detail = "trained " + fmt("%.2f", ours) + " deg, untrained " + fmt("%.2f", base) + " deg (need < 40 and < " +
             fmt("%.2f", 0.5 * base) + ")";
  return o;
}

// ---------------------------------------------------------------------------
// 5. Finite differences on a micro-model

Outcome gradients(std::uint64_t seed) {
  ModelConfig mc;
  mc.points = 2;
  mc.channels = 2;
  mc.wide_channels = 2;
  mc.knn = 2;
  mc.min_points = 2;
  mc.patches = 1;
  mc.decoder_hidden = 4;
  mc.decoder_layers = 2;
  mc.init_seed = seed;
  const AutoEncoder model(mc);
  Rng rng(seed + 5);
  const PointCloud x = random_cloud(2, rng);
  Rng noise_rng(seed + 6);
  const PointCloud noisy = gaussian_noise(x, 0.025, noise_rng);
  const PointCloud swapped = x.select({1, 0});
  const LossWeights weights;

  auto loss = [&] {
    const Tensor xt = x.to_tensor();
    const ForwardResult f = model.forward(xt, Mode::kTrain);
    LossParts parts;
    parts.rec = chamfer_loss(xt, f.reconstruction);
    parts.ortho = loss_ortho(f.pose.r_tilde);
    parts.aug = loss_aug_consist(f.pose, {model.encode_pose(noisy.to_tensor(), Mode::kTrain),
                                          model.encode_pose(swapped.to_tensor(), Mode::kTrain)});
    Rng can_rng(seed + 7);
    parts.can = loss_can_consist(model, f.shape.points, can_rng, 0.1, false);
    return total_loss(parts, weights);
  };

  auto params = model.parameters();
  for (auto& p : params) p.tensor.zero_grad();
  {
    Tape tape;
    const auto scope = tape.activate();
    tape.backward(loss());
  }
  const double h = 1e-4;
  std::vector<std::vector<double>> analytic, numeric;
  double global = 0.0;
  std::size_t scalars = 0;
  for (auto& p : params) {
    analytic.push_back(p.tensor.grad());
    auto data = p.tensor.mutable_data();
    std::vector<double> n(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double keep = data[i];
      auto at = [&](double d) {
        data[i] = keep + d;
        return loss().item();
      };
      n[i] = (at(-2.0 * h) - 8.0 * at(-h) + 8.0 * at(h) - at(2.0 * h)) / (12.0 * h);
      data[i] = keep;
      global = std::max({global, std::abs(n[i]), std::abs(analytic.back()[i])});
    }
    scalars += data.size();
    numeric.push_back(std::move(n));
  }
  // Gradients far below the largest one are compared on the model-wide scale.
  const double floor = 1e-4 * global;
  double worst = 0.0, worst_abs = 0.0;
  std::string worst_name;
  for (std::size_t k = 0; k < params.size(); ++k) {
    double diff = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < numeric[k].size(); ++i) {
      diff = std::max(diff, std::abs(numeric[k][i] - analytic[k][i]));
      scale = std::max({scale, std::abs(numeric[k][i]), std::abs(analytic[k][i])});
    }
    worst_abs = std::max(worst_abs, diff);
    const double rel = diff / std::max(scale, floor);
    if (rel >= worst) {
      worst = rel;
      worst_name = params[k].name;
    }
  }
  Outcome o;
  o.pass = worst < 1e-4;
  o.detail = "worst relative error " + fmt("%.2e", worst) + " (" + worst_name + ") over " + std::to_string(params.size()) +
             " parameters, " + std::to_string(scalars) + " scalars, worst absolute " + fmt("%.1e", worst_abs) + ", gradient scale " + fmt("%.2e", global);
  return o;
}

// ---------------------------------------------------------------------------
// 6. Orthonormalisation

Outcome orthonormalisation(std::uint64_t seed) {
  Rng rng(seed + 8);
  double worst_orth = 0.0;
  std::size_t beaten = 0, matrices = 0;
  while (matrices < 1000) {
    Mat3 m;
    for (int i = 0; i < 9; ++i) m.data()[i] = rng.normal();
    if (std::abs(m.determinant()) < 1e-6) continue;
    ++matrices;
    const Mat3 r = closest_orthonormal(m);
    worst_orth = std::max(worst_orth, (r.transpose() * r - Mat3::Identity()).norm());
    const double best = (r - m).norm();
    bool ok = true;
    for (int c = 0; c < 1000 && ok; ++c) {
      Mat3 q = sample_uniform_rotation(rng);
      if (rng.uniform() < 0.5) q = -q;
      ok = (q - m).norm() >= best;
    }
    beaten += ok ? 0 : 1;
  }
  Outcome o;
  o.pass = worst_orth < 1e-10 && beaten == 0;
  o.detail = "max ||R^T R - I|| " + fmt("%.2e", worst_orth) + ", candidates closer than R^ in " + std::to_string(beaten) +
             "/1000 matrices";
  return o;
}

// ---------------------------------------------------------------------------
// 7. Brute-force oracles

double oracle_chamfer(const PointCloud& x, const PointCloud& y) {
  auto directed = [](const PointCloud& a, const PointCloud& b) {
    double total = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < b.size(); ++j) best = std::min(best, squared_distance(a.point(i), b.point(j)));
      total += best;
    }
    return total / static_cast<double>(a.size());
  };
  return directed(x, y) + directed(y, x);
}

std::vector<std::size_t> oracle_fps(const PointCloud& x, std::size_t first, std::size_t k) {
  std::vector<std::size_t> chosen{first};
  while (chosen.size() < k) {
    std::size_t arg = 0;
    double best = -1.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      double d = std::numeric_limits<double>::infinity();
      for (std::size_t c : chosen) d = std::min(d, squared_distance(x.point(i), x.point(c)));
      if (d > best) {
        best = d;
        arg = i;
      }
    }
    chosen.push_back(arg);
  }
  return chosen;
}

std::vector<std::size_t> oracle_knn_removal(const PointCloud& x, std::size_t anchor, std::size_t k) {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double di = squared_distance(x.point(i), x.point(anchor));
    std::size_t closer = 0;
    for (std::size_t j = 0; j < x.size(); ++j) {
      const double dj = squared_distance(x.point(j), x.point(anchor));
      if (dj < di || (dj == di && j < i)) ++closer;
    }
    if (closer >= k) keep.push_back(i);
  }
  return keep;
}

std::vector<std::size_t> oracle_maxpool(const VectorFeatureSet& v, const Tensor& kw, const Tensor& ow) {
  auto mix = [&](const Tensor& w, std::size_t c, std::size_t n) {
    Vec3 out = Vec3::Zero();
    for (std::size_t j = 0; j < v.channels(); ++j) out += w.at({c, j}) * v.vector(j, n);
    return out;
  };
  std::vector<std::size_t> arg(v.channels(), 0);
  for (std::size_t c = 0; c < v.channels(); ++c) {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t n = 0; n < v.points(); ++n) {
      const Vec3 origin = mix(ow, c, n);
      const Vec3 a = v.vector(c, n) - origin, b = mix(kw, c, n) - origin;
      const double s = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
      if (s > best) {
        best = s;
        arg[c] = n;
      }
    }
  }
  return arg;
}

Outcome oracles(std::uint64_t seed) {
  Rng rng(seed + 9);
  std::size_t bad_chamfer = 0, bad_fps = 0, bad_knn = 0, bad_pool = 0;
  const std::size_t trials = 2000;
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t n = 1 + rng.index(8);
    PointCloud x = random_cloud(n, rng);
    if (t % 4 == 0 && n > 1) {
      Points p = x.points();
      p.row(static_cast<Eigen::Index>(n - 1)) = p.row(0);
      x = PointCloud(std::move(p));
    }
    const PointCloud y = random_cloud(1 + rng.index(8), rng);
    bad_chamfer += chamfer(x, y) == oracle_chamfer(x, y) ? 0 : 1;

    const std::size_t k = 1 + rng.index(n);
    Rng draw = rng.fork(2 * t);
    Rng peek = draw;
    const std::size_t first = peek.index(n);
    bad_fps += fps_indices(x, k, draw) == oracle_fps(x, first, k) ? 0 : 1;

    const std::size_t r = rng.index(n);
    Rng draw2 = rng.fork(2 * t + 1);
    Rng peek2 = draw2;
    const auto kept = knn_removal_indices(x, r, draw2);
    if (r == 0) {
      bad_knn += kept.size() == n ? 0 : 1;
    } else {
      bad_knn += kept == oracle_knn_removal(x, peek2.index(n), r) ? 0 : 1;
    }

    const std::size_t c = 1 + rng.index(4);
    RowStochasticWeights kw(c, c, rng), ow(c, c, rng);
    const VectorFeatureSet v = random_feature_set(c, n, rng);
    const auto pooled = vnt_maxpool(v, kw, ow);
    const auto expect = oracle_maxpool(v, kw.effective(), ow.effective());
    bool same = pooled.argmax == expect;
    for (std::size_t ch = 0; ch < c && same; ++ch) same = pooled.pooled.vector(ch, 0) == v.vector(ch, expect[ch]);
    bad_pool += same ? 0 : 1;
  }
  Outcome o;
  o.pass = bad_chamfer + bad_fps + bad_knn + bad_pool == 0;
  o.detail = "mismatches over " + std::to_string(trials) + " instances with N <= 8: chamfer " +
             std::to_string(bad_chamfer) + ", fps " + std::to_string(bad_fps) + ", knn_removal " +
             std::to_string(bad_knn) + ", vnt_maxpool " + std::to_string(bad_pool);
  return o;
}

// ---------------------------------------------------------------------------
// 8. Determinism

Outcome determinism(std::uint64_t seed, const fs::path& out) {
  RunConfig cfg;
  cfg.model.channels = 6;
  cfg.model.wide_channels = 12;
  cfg.model.points = 256;
  cfg.model.patches = 4;
  cfg.model.decoder_hidden = 32;
  cfg.synthetic = winged(8, true);
  cfg.synthetic.points = 256;
  cfg.synthetic.dense_points = 512;
  cfg.train.epochs = 3;
  cfg.train.batch_size = 4;
  cfg.train.augment.fps_min = 100;
  cfg.train.augment.fps_max = 200;
  cfg.train.augment.knn_count = 30;
  cfg.seed = seed;
  cfg.out = out / "determinism_a";
  const TrainResult a = cmd_train(cfg);
  cfg.out = out / "determinism_b";
  cmd_train(cfg);
  const std::string log_a = detail::read_file(out / "determinism_a" / "metrics.jsonl");
  const std::string log_b = detail::read_file(out / "determinism_b" / "metrics.jsonl");
  const bool logs = !log_a.empty() && log_a == log_b;

  const AutoEncoder model = model_from_checkpoint(load_checkpoint(a.final_checkpoint), cfg.model);
  const fs::path copy = out / "roundtrip.ckpt";
  save_checkpoint(make_checkpoint(model, nullptr, 0, ""), copy);
  const AutoEncoder back = model_from_checkpoint(load_checkpoint(copy), cfg.model);
  Rng rng(seed + 10);
  bool exact = true;
  for (int t = 0; t < 5; ++t) {
    const Tensor x = random_cloud(256, rng).to_tensor();
    const ForwardResult f = model.forward(x, Mode::kEval), g = back.forward(x, Mode::kEval);
    for (const auto& [p, q] : {std::pair{f.reconstruction, g.reconstruction}, std::pair{f.pose.r_tilde, g.pose.r_tilde},
                               std::pair{f.pose.t_tilde, g.pose.t_tilde}, std::pair{f.shape.points, g.shape.points}}) {
      exact = exact && p.numel() == q.numel() &&
              std::memcmp(p.data().data(), q.data().data(), p.numel() * sizeof(double)) == 0;
    }
  }
  Outcome o;
  o.pass = logs && exact;
  o.detail = std::string("metric logs ") + (logs ? "identical" : "differ") + " (" + std::to_string(log_a.size()) +
             " bytes), checkpoint round trip " + (exact ? "bit-exact" : "not bit-exact");
  return o;
}

template <class F>
Outcome timed(F&& f) {
  const auto start = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = f();
  } catch (const std::exception& e) {
    o.pass = false;
    o.detail = std::string("error: ") + e.what();
  }
  o.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks, one PASS/FAIL line per criterion"};
  std::string out = "acceptance_run";
  std::uint64_t seed = 1;
  std::vector<int> only;
  app.add_option("--out", out, "directory for logs and checkpoints");
  app.add_option("--seed", seed, "base seed");
  app.add_option("--only", only, "run only these criteria (2 and 4 also train)")->check(CLI::Range(1, 8));
  CLI11_PARSE(app, argc, argv);

  const fs::path dir(out);
  fs::create_directories(dir);
  std::set<int> want(only.begin(), only.end());
  if (want.empty()) want = {1, 2, 3, 4, 5, 6, 7, 8};
  std::map<int, Outcome> results;
  auto run = [&](int id, auto&& f) {
    if (!want.count(id)) return;
    std::cerr << "running criterion " << id << std::endl;
    results[id] = timed(f);
  };

  run(1, [&] { return equivariance(seed); });
  run(5, [&] { return gradients(seed); });
  run(6, [&] { return orthonormalisation(seed); });
  run(7, [&] { return oracles(seed); });
  run(8, [&] { return determinism(seed, dir); });

  if (want.count(2) || want.count(3) || want.count(4)) {
    std::cerr << "training the desk-scale model" << std::endl;
    Trained trained;
    std::string train_error;
    try {
      trained = desk_training(seed, dir);
    } catch (const std::exception& e) {
      train_error = e.what();
    }
    const AutoEncoder untrained(ModelConfig{});
    auto needs_model = [&](auto&& f) {
      return [&, f]() -> Outcome {
        if (!trained.model) return {false, "training failed: " + train_error, 0.0};
        return f();
      };
    };
    if (want.count(3)) {
      results[3] = trained.model ? training_outcome(trained) : Outcome{false, "training failed: " + train_error, 0.0};
      results[3].seconds = trained.seconds;
    }
    run(2, needs_model([&] { return stability_of(untrained, *trained.model, seed); }));
    run(4, needs_model([&] { return consistency_of(untrained, *trained.model, seed); }));
  }

  bool all = true;
  nlohmann::json record = nlohmann::json::array();
  for (const auto& [id, o] : results) {
    std::printf("criterion %d: %s  %s  [%.1f s]\n", id, o.pass ? "PASS" : "FAIL", o.detail.c_str(), o.seconds);
    record.push_back({{"criterion", id}, {"pass", o.pass}, {"detail", o.detail}, {"seconds", o.seconds}});
    all = all && o.pass;
  }
  std::fflush(stdout);
  detail::write_file(dir / "acceptance.json", record.dump(2) + "\n");
  return all ? 0 : 1;
}
