// Desk-scale acceptance suite. Prints one PASS/FAIL line per criterion and exits nonzero if any
// criterion fails. Optional arguments select criteria by number, e.g. `gfp_acceptance 1 2 11`.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "gfp/attacks.hpp"
#include "gfp/baselines.hpp"
#include "gfp/classifier.hpp"
#include "gfp/fingerprint_vis.hpp"
#include "gfp/image.hpp"
#include "gfp/jpeg.hpp"
#include "gfp/metrics.hpp"
#include "gfp/synth.hpp"
#include "gfp/trainer.hpp"
#include "gradcheck.hpp"

using namespace gfp;
namespace fs = std::filesystem;

namespace {

// Desk dataset: real + 5 sources differing only in pattern seed, 32x32, 500 train / 100 test.
constexpr int kSources = 5;
constexpr int kClasses = kSources + 1;
constexpr int kTrainPerClass = 500;
constexpr int kTestPerClass = 100;
constexpr int kSize = 32;
constexpr std::uint64_t kSourceSeed = 42;
constexpr std::uint64_t kBaseSeed = 7;
constexpr double kAmplitude = 0.02;
constexpr int kEpochs = 3;
constexpr double kChance = 1.0 / kClasses;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

synth::DatasetSplit desk_split(double amplitude) {
  return synth::sample_split(synth::seeded_sources(kSources, kSourceSeed, amplitude), kBaseSeed, kTrainPerClass,
                             kTestPerClass, kSize, true);
}

attr::ArchConfig desk_arch(const std::string& variant) {
  attr::ArchConfig c;
  c.input_size = kSize;
  c.num_classes = kClasses;
  c.variant = attr::Variant::parse(variant);
  return c;
}

attr::Classifier train_variant(const synth::LabeledDataset& train, const std::string& variant) {
  attr::Classifier net(desk_arch(variant), 1);
  attr::TrainHyper h;
  h.epochs = kEpochs;
  attr::train(net, train, h);
  return net;
}

std::vector<Tensor> images_of(const synth::LabeledDataset& ds) {
  std::vector<Tensor> out;
  out.reserve(ds.size());
  for (const auto& r : ds.records) out.push_back(r.image);
  return out;
}

// Shared desk data and the trained full network, built on first use.
struct Desk {
  synth::DatasetSplit split;
  std::optional<attr::Classifier> net;
  double accuracy = 0.0;
};

Desk& desk() {
  static Desk d;
  if (d.split.train.empty()) d.split = desk_split(kAmplitude);
  if (!d.net) {
    d.net = train_variant(d.split.train, "full");
    d.accuracy = attr::evaluate(*d.net, d.split.test).accuracy;
  }
  return d;
}

// ---------------------------------------------------------------------------------------------

Outcome gradient_checks() {
  const auto t0 = Clock::now();
  const auto& ops = testing::differentiable_ops();
  constexpr int kInstances = 100;
  double worst = 0.0;
  std::string worst_op;
  Rng rng(2024);
  for (int i = 0; i < kInstances; ++i) {
    const auto& op = ops[i % ops.size()];
    const auto r = testing::check_gradients(testing::make_grad_case(op, rng), 1000 + i);
    if (r.max_rel_error > worst) {
      worst = r.max_rel_error;
      worst_op = op;
    }
  }
  const double t = seconds_since(t0);
  return {worst <= 1e-3 && t < 30.0, std::to_string(kInstances) + " instances over " + std::to_string(ops.size()) +
                                         " ops, max rel error " + fmt("%.2e", worst) + " (" + worst_op + "), " +
                                         fmt("%.1f", t) + " s"};
}

Outcome frechet_exactness() {
  Rng rng(77);
  double closed_err = 0.0, self = 0.0, asym = 0.0;
  for (int i = 0; i < 50; ++i) {
    const int d = rng.uniform_int(1, 6);
    metrics::GaussianStats a, b;
    a.mean.resize(d);
    b.mean.resize(d);
    a.covariance = Eigen::MatrixXd::Zero(d, d);
    b.covariance = Eigen::MatrixXd::Zero(d, d);
    double expected = 0.0;
    for (int k = 0; k < d; ++k) {
      a.mean[k] = rng.uniform(-2, 2);
      b.mean[k] = rng.uniform(-2, 2);
      const double sa = rng.uniform(0.1, 2.0), sb = rng.uniform(0.1, 2.0);
      a.covariance(k, k) = sa * sa;
      b.covariance(k, k) = sb * sb;
      expected += (a.mean[k] - b.mean[k]) * (a.mean[k] - b.mean[k]) + (sa - sb) * (sa - sb);
    }
    closed_err = std::max(closed_err, std::abs(metrics::frechet_distance(a, b) - expected));

    // Full covariances from samples, both storage forms.
    const int dim = rng.uniform_int(2, 12), n = rng.uniform_int(3, 20);
    Eigen::MatrixXd xa(n, dim), xb(n + 3, dim);
    for (Eigen::Index r = 0; r < xa.rows(); ++r)
      for (int k = 0; k < dim; ++k) xa(r, k) = rng.normal(0.0, 1.0 + k * 0.1);
    for (Eigen::Index r = 0; r < xb.rows(); ++r)
      for (int k = 0; k < dim; ++k) xb(r, k) = rng.normal(0.5, 1.0);
    const auto fa = metrics::gaussian_fit(xa), fb = metrics::gaussian_fit(xb);
    self = std::max(self, metrics::frechet_distance(fa, fa));
    asym = std::max(asym, std::abs(metrics::frechet_distance(fa, fb) - metrics::frechet_distance(fb, fa)));
  }
  return {closed_err <= 1e-9 && self <= 1e-9 && asym <= 1e-8,
          "closed-form error " + fmt("%.1e", closed_err) + ", FD(a,a) " + fmt("%.1e", self) + ", asymmetry " +
              fmt("%.1e", asym)};
}

Outcome attribution_accuracy() {
  const auto t0 = Clock::now();
  auto& d = desk();
  const auto& train = d.split.train;
  const auto& test = d.split.test;
  const auto imgs = images_of(test);
  const double knn = baselines::accuracy(baselines::knn_classify_batch(baselines::knn_fit(train), imgs, 1), test);
  const auto eig = baselines::eigenface_fit(train);
  std::vector<int> pred;
  for (const auto& im : imgs) pred.push_back(baselines::eigenface_classify(eig, im));
  const double eigen = baselines::accuracy(pred, test);
  const double t = seconds_since(t0);
  return {d.accuracy >= 0.95 && knn < d.accuracy && eigen < d.accuracy && t <= 900.0,
          "ours " + fmt("%.4f", d.accuracy) + ", knn " + fmt("%.4f", knn) + ", eigenface " + fmt("%.4f", eigen) + ", " +
              fmt("%.1f", t) + " s"};
}

Outcome null_control() {
  const auto split = desk_split(0.0);
  const auto net = train_variant(split.train, "full");
  const double acc = attr::evaluate(net, split.test).accuracy;
  return {std::abs(acc - kChance) <= 0.05, "accuracy " + fmt("%.4f", acc) + ", chance " + fmt("%.4f", kChance)};
}

Outcome frequency_trend() {
  auto& d = desk();
  // predown:32 is the full network (same layers, same seed).
  const double f1 = d.accuracy;
  const double f2 = attr::evaluate(train_variant(d.split.train, "predown:16"), d.split.test).accuracy;
  const double f4 = attr::evaluate(train_variant(d.split.train, "predown:8"), d.split.test).accuracy;
  const double res = attr::evaluate(train_variant(d.split.train, "residual:16"), d.split.test).accuracy;
  const bool monotone = f2 <= f1 + 0.03 && f4 <= f2 + 0.03;
  const bool residual = std::abs(res - f1) <= 0.05;
  return {monotone && residual, "predown x1 " + fmt("%.4f", f1) + ", x2 " + fmt("%.4f", f2) + ", x4 " +
                                    fmt("%.4f", f4) + "; residual x2 " + fmt("%.4f", res)};
}

Outcome patch_trend() {
  auto& d = desk();
  const std::vector<int> starts{4, 8, 16, 32};  // patch shrinks as the pool starts earlier
  std::vector<double> acc;
  std::string detail;
  for (int r : starts) {
    acc.push_back(attr::evaluate(train_variant(d.split.train, "postpool:" + std::to_string(r)), d.split.test).accuracy);
    detail += "postpool:" + std::to_string(r) + " (patch " +
              std::to_string(attr::receptive_field(desk_arch("full"), r)) + ") " + fmt("%.4f", acc.back()) + ", ";
  }
  bool monotone = true;
  for (std::size_t i = 1; i < acc.size(); ++i) monotone = monotone && acc[i] <= acc[i - 1];
  // Sharp drop: the smallest patch is at chance while the largest is far above it.
  const bool drop = acc.back() <= kChance + 0.05 && acc.front() - acc.back() >= 0.5;
  detail += monotone ? "non-increasing" : "not non-increasing";
  return {monotone && drop, detail};
}

Outcome attack_trend() {
  auto& d = desk();
  const auto& test = d.split.test;
  const auto noise_test = attacks::AttackSpec::parse("noise:seed=5");
  const auto relight_test = attacks::AttackSpec::parse("relight:seed=5");
  const double clean = d.accuracy;
  const double noisy = attr::evaluate(*d.net, attacks::attack_dataset(test, noise_test)).accuracy;
  const double relit = attr::evaluate(*d.net, attacks::attack_dataset(test, relight_test)).accuracy;

  attr::Classifier immune = *d.net;
  attr::TrainHyper h;
  h.epochs = kEpochs;
  h.seed = 9;
  attacks::immunize(immune, d.split.train, attacks::AttackSpec::parse("noise:seed=13"), h);
  const double recovered = attr::evaluate(immune, attacks::attack_dataset(test, noise_test)).accuracy;

  const bool pass = noisy < 0.40 && recovered >= 0.80 && (clean - relit) < (clean - noisy);
  return {pass, "clean " + fmt("%.4f", clean) + ", noise " + fmt("%.4f", noisy) + ", immunized " +
                    fmt("%.4f", recovered) + ", relight " + fmt("%.4f", relit)};
}

Outcome fd_separation() {
  auto& d = desk();
  const auto& test = d.split.test;
  const auto feats = d.net->extract_features(images_of(test));
  std::vector<std::vector<std::size_t>> rows(kClasses);
  for (std::size_t i = 0; i < test.size(); ++i) rows[test.records[i].label].push_back(i);
  metrics::FeatureSet learned, pixels;
  const std::size_t fd = feats.front().size(), pd = test.records.front().image.size();
  for (int k = 0; k < kClasses; ++k) {
    Eigen::MatrixXd a(rows[k].size(), fd), b(rows[k].size(), pd);
    for (std::size_t j = 0; j < rows[k].size(); ++j) {
      for (std::size_t c = 0; c < fd; ++c) a(j, c) = feats[rows[k][j]][c];
      const auto& im = test.records[rows[k][j]].image;
      for (std::size_t c = 0; c < pd; ++c) b(j, c) = im[c];
    }
    learned[k] = std::move(a);
    pixels[k] = std::move(b);
  }
  const auto rf = metrics::fd_ratio(learned, 3), rp = metrics::fd_ratio(pixels, 3);
  return {rf.ratio >= 10.0 * rp.ratio,
          "classifier features " + fmt("%.3f", rf.ratio) + ", raw pixels " + fmt("%.3f", rp.ratio)};
}

Outcome visualization() {
  auto& d = desk();
  vis::VisConfig cfg;
  cfg.size = kSize;
  cfg.num_classes = kClasses;
  auto nets = vis::init_vis(cfg, 3);
  vis::train_vis(nets, d.split.train, vis::VisHyper{});
  const double acc = vis::attribution_accuracy(nets, d.split.test);
  const auto m = vis::response_matrix(nets, d.split.test);
  double diag = 0.0;
  for (int k = 0; k < kClasses; ++k) diag += m[k][k];
  diag /= kClasses;
  double worst_row = -1e300;
  for (int k = 0; k < kClasses; ++k) {
    double s = 0.0;
    for (int j = 0; j < kClasses; ++j)
      if (j != k) s += m[k][j];
    worst_row = std::max(worst_row, s / (kClasses - 1));
  }
  return {acc >= 0.90 && diag > worst_row, "attribution " + fmt("%.4f", acc) + ", diagonal mean " + fmt("%.4f", diag) +
                                               ", largest off-diagonal row mean " + fmt("%.4f", worst_row)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "gfp_acceptance_determinism";
  fs::remove_all(root);
  auto pipeline = [&](const std::string& name) {
    const fs::path dir = root / name;
    fs::create_directories(dir);
    const std::string p = dir.string() + "/";
    int rc = cli::run({"--deterministic", "gen", "--classes", std::to_string(kClasses), "--per-class",
                       std::to_string(kTrainPerClass), "--test-per-class", std::to_string(kTestPerClass), "--size",
                       std::to_string(kSize), "--seed", std::to_string(kBaseSeed), "--source-seed",
                       std::to_string(kSourceSeed), "--out", p + "train.gfpd", "--test-out", p + "test.gfpd"});
    if (rc == 0)
      rc = cli::run({"--deterministic", "train", "--data", p + "train.gfpd", "--out", p + "model.gfpc", "--epochs",
                     std::to_string(kEpochs)});
    if (rc == 0)
      rc = cli::run({"--deterministic", "eval", "--model", p + "model.gfpc", "--data", p + "test.gfpd", "--out",
                     p + "report", "--baselines", p + "train.gfpd"});
    return rc;
  };
  const int rc_a = pipeline("a"), rc_b = pipeline("b");
  if (rc_a != 0 || rc_b != 0) {
    fs::remove_all(root);
    return {false, "pipeline exit codes " + std::to_string(rc_a) + ", " + std::to_string(rc_b)};
  }
  std::vector<std::string> files{"train.gfpd", "test.gfpd", "model.gfpc"};
  for (const auto& e : fs::directory_iterator(root / "a" / "report"))
    if (e.path().extension() == ".csv") files.push_back("report/" + e.path().filename().string());
  int differing = 0;
  std::string first;
  for (const auto& f : files) {
    const auto a = slurp(root / "a" / f), b = slurp(root / "b" / f);
    if (a.empty() || a != b) {
      ++differing;
      if (first.empty()) first = f;
    }
  }
  fs::remove_all(root);
  return {differing == 0, std::to_string(files.size()) + " artifacts compared" +
                              (differing ? ", " + std::to_string(differing) + " differ (first " + first + ")" : ", all identical")};
}

// Smooth test images: every channel varies at the lowest spatial frequency of the image
// (ramps and single-period sinusoids), with the channels out of phase so chroma is not flat.
Tensor smooth_image(int size, int variant) {
  Tensor t({size, size, 3});
  const double pi = std::acos(-1.0);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      for (int c = 0; c < 3; ++c) {
        const double u = (x + 0.5) / size, v = (y + 0.5) / size;
        double s = 0.0;
        switch (variant) {
          case 0: s = 0.15 + 0.7 * (c == 1 ? 1 - u : u); break;
          case 1: s = 0.2 + 0.3 * (u + v) * (0.5 + 0.25 * c); break;
          case 2: s = 0.5 + 0.3 * std::sin(2 * pi * (u + c / 3.0)); break;
          default: s = 0.5 + 0.3 * std::cos(pi * v + c) * std::cos(pi * u); break;
        }
        t[(static_cast<std::size_t>(y) * size + x) * 3 + c] = static_cast<float>(s);
      }
  return t;
}

Outcome jpeg_pipeline() {
  double worst_psnr = 1e300;
  for (int v = 0; v < 4; ++v)
    for (bool sub : {false, true}) {
      auto img = smooth_image(32, v);
      image::quantize8(img);
      worst_psnr = std::min(worst_psnr, image::psnr(img, jpeg::round_trip(img, {100, sub})));
    }

  double gray_err = 0.0;
  for (float g : {127.0f / 255, 128.0f / 255, 0.5f})
    for (bool sub : {false, true}) {
      const Tensor gray({24, 24, 3}, g);
      gray_err = std::max(gray_err, image::max_abs_diff(jpeg::round_trip(gray, {75, sub}), gray));
    }

  // Mean PSNR over natural-statistics images must not fall as quality rises.
  const auto imgs = synth::gen_base_images(5, 8, 32);
  std::vector<double> curve;
  for (int q = 10; q <= 100; q += 10) {
    double s = 0.0;
    for (const auto& im : imgs) s += image::psnr(im, jpeg::round_trip(im, {q, true}));
    curve.push_back(s / imgs.size());
  }
  bool monotone = true;
  for (std::size_t i = 1; i < curve.size(); ++i) monotone = monotone && curve[i] >= curve[i - 1];

  return {worst_psnr >= 40.0 && gray_err <= 1.0 / 255 + 1e-7 && monotone,
          "q100 PSNR " + fmt("%.2f", worst_psnr) + " dB, gray max error " + fmt("%.2f", gray_err * 255) +
              "/255, PSNR q10 " + fmt("%.2f", curve.front()) + " .. q100 " + fmt("%.2f", curve.back()) +
              (monotone ? " monotone" : " not monotone")};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all{
      {1, "gradient checks", gradient_checks},
      {2, "frechet distance exactness", frechet_exactness},
      {3, "attribution accuracy", attribution_accuracy},
      {4, "null control", null_control},
      {5, "frequency persistence trend", frequency_trend},
      {6, "patch persistence trend", patch_trend},
      {7, "attack and immunization trend", attack_trend},
      {8, "fd ratio separation", fd_separation},
      {9, "fingerprint visualization", visualization},
      {10, "pipeline determinism", determinism},
      {11, "jpeg pipeline", jpeg_pipeline},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) {
    try {
      selected.insert(std::stoi(argv[i]));
    } catch (const std::exception&) {
      std::fprintf(stderr, "usage: %s [criterion numbers...]\n", argv[0]);
      return 2;
    }
  }

  int failed = 0, ran = 0;
  for (const auto& c : all) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    ++ran;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s criterion %2d %-30s %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
  }
  std::printf("%d/%d criteria passed\n", ran - failed, ran);
  return failed ? 1 : 0;
}
