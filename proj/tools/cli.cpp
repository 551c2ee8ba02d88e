#include "cli.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "gfp/attacks.hpp"
#include "gfp/baselines.hpp"
#include "gfp/checkpoint.hpp"
#include "gfp/classifier.hpp"
#include "gfp/dataset_io.hpp"
#include "gfp/fingerprint_vis.hpp"
#include "gfp/metrics.hpp"
#include "gfp/report.hpp"
#include "gfp/trainer.hpp"
#include "json.hpp"

#ifndef GFP_VERSION
#define GFP_VERSION "0.0.0"
#endif

namespace gfp::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

const char* const kSubcommands[] = {"gen", "train", "eval", "attack", "immunize", "visualize", "fdratio"};

struct Context {
  std::vector<std::string> args;  // as typed, without the program name
  json config;                    // --config contents, null when absent
  bool deterministic = false;
  std::string subcommand;
};

void log(const std::string& msg) { std::cerr << msg << '\n'; }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string join(const std::vector<std::string>& items, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? sep : "") + items[i];
  return out;
}

void require_file(const fs::path& p) {
  std::error_code ec;
  if (!fs::is_regular_file(p, ec)) throw IoError("no such file: " + p.string());
}

// Output files go into an existing directory; nothing is created implicitly.
void require_parent(const fs::path& p) {
  if (p.empty()) throw ArgumentError("output path is empty");
  const fs::path parent = p.parent_path();
  std::error_code ec;
  if (!parent.empty() && !fs::is_directory(parent, ec)) throw IoError("output directory does not exist: " + parent.string());
}

void make_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw IoError("cannot create " + p.string() + ": " + ec.message());
}

fs::path sidecar_path(const fs::path& p) { return fs::path(p.string() + ".json"); }

struct Input {
  fs::path path;
  io::Bytes bytes;
};

Input read_input(const fs::path& p) { return {p, io::read_file(p)}; }

json provenance(const Context& ctx, const std::vector<const Input*>& inputs, json seeds, json options) {
  json in = json::array();
  for (const auto* i : inputs) in.push_back({{"path", i->path.string()}, {"hash", io::content_hash(i->bytes)}});
  return {{"tool", "gfp"},
          {"version", GFP_VERSION},
          {"subcommand", ctx.subcommand},
          {"command", ctx.args},
          {"config", ctx.config},
          {"deterministic", ctx.deterministic},
          {"seeds", std::move(seeds)},
          {"options", std::move(options)},
          {"inputs", std::move(in)}};
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

void write_with_sidecar(const fs::path& path, const io::Bytes& bytes, json meta) {
  meta["output"] = {{"path", path.filename().string()}, {"hash", io::content_hash(bytes)}};
  io::write_file_atomic(path, bytes);
  io::write_file_atomic(sidecar_path(path), dump(meta));
}

json file_list(const std::vector<fs::path>& files) {
  json out = json::array();
  for (const auto& f : files) out.push_back({{"path", f.filename().string()}, {"hash", io::content_hash(io::read_file(f))}});
  return out;
}

synth::LabeledDataset load_dataset(const Input& in) {
  auto ds = synth::decode_dataset(in.bytes);
  ds.validate();
  return ds;
}

void check_classes(const std::vector<std::string>& model, const std::vector<std::string>& data,
                   const std::string& model_what, const std::string& data_what) {
  if (model == data) return;
  throw FormatError("class table mismatch\n  " + model_what + " classes: [" + join(model, ", ") + "]\n  " + data_what +
                    " classes: [" + join(data, ", ") + "]");
}

struct LoadedClassifier {
  attr::Classifier net;
  std::vector<std::string> classes;
};

LoadedClassifier load_classifier(const Input& ckpt) {
  const json side = json::parse(io::read_file(sidecar_path(ckpt.path)));
  const auto cfg = attr::ArchConfig::from_json(side.at("arch"));
  auto params = to_params(decode_checkpoint(ckpt.bytes));
  return {attr::Classifier(cfg, std::move(params)), side.at("classes").get<std::vector<std::string>>()};
}

void check_image_dims(const attr::ArchConfig& cfg, const synth::LabeledDataset& ds) {
  const auto d = ds.image_dims();
  if (d[0] != cfg.input_size || d[1] != cfg.input_size || d[2] != cfg.in_channels)
    throw FormatError("dataset images are " + dims_to_string(d) + ", checkpoint expects " +
                      std::to_string(cfg.input_size) + "x" + std::to_string(cfg.input_size) + "x" +
                      std::to_string(cfg.in_channels));
}

std::vector<Tensor> images_of(const synth::LabeledDataset& ds) {
  std::vector<Tensor> out;
  out.reserve(ds.size());
  for (const auto& r : ds.records) out.push_back(r.image);
  return out;
}

metrics::ConfusionMatrix confusion_of(std::span<const int> predicted, const synth::LabeledDataset& ds) {
  metrics::ConfusionMatrix m(ds.num_classes());
  for (std::size_t i = 0; i < ds.size(); ++i) m.add(ds.records[i].label, predicted[i]);
  return m;
}

void check_finite_history(const attr::EpochStats& s) {
  if (!std::isfinite(s.loss)) throw NumericalError("training loss became non-finite in epoch " + std::to_string(s.epoch));
}

json history_json(const attr::History& h) {
  json out = json::array();
  for (const auto& s : h) out.push_back({{"epoch", s.epoch}, {"loss", s.loss}, {"accuracy", s.accuracy}});
  return out;
}

void save_classifier(const fs::path& out, const attr::Classifier& net, const std::vector<std::string>& classes, json meta) {
  meta["arch"] = net.config().to_json();
  meta["classes"] = classes;
  write_with_sidecar(out, encode_checkpoint(to_named(net.params())), std::move(meta));
}

attacks::AttackSpec make_attack(const std::string& kind, const std::vector<std::string>& params, std::uint64_t seed) {
  auto spec = attacks::AttackSpec::parse(kind + ":" + join(params, ","));
  spec.seed = seed;
  spec.validate();
  return spec;
}

// ---------------------------------------------------------------------------------------------

struct GenOpts {
  int classes = 6;
  int per_class = 200;
  int test_per_class = 0;
  int size = 32;
  std::uint64_t seed = 1;
  std::uint64_t source_seed = 42;
  double amplitude = 0.02;
  double filter_strength = 0.0;
  bool no_real = false;
  std::string out, test_out;
};

void cmd_gen(const Context& ctx, const GenOpts& o) {
  const bool real = !o.no_real;
  const int sources = o.classes - (real ? 1 : 0);
  if (sources < 1) throw ArgumentError("need at least one generator source");
  require_parent(o.out);
  if (o.test_per_class > 0) {
    if (o.test_out.empty()) throw ArgumentError("--test-per-class needs --test-out");
    require_parent(o.test_out);
  }
  const auto specs = synth::seeded_sources(sources, o.source_seed, o.amplitude, o.filter_strength);
  for (const auto& s : specs) synth::validate(s);

  json src = json::array();
  for (const auto& s : specs)
    src.push_back({{"name", s.name}, {"label", s.label}, {"seed", s.seed}, {"pattern_amplitude", s.pattern_amplitude},
                   {"filter_strength", s.filter_strength}});
  const json options = {{"classes", o.classes},   {"per_class", o.per_class},   {"test_per_class", o.test_per_class},
                        {"size", o.size},         {"include_real", real},        {"amplitude", o.amplitude},
                        {"filter_strength", o.filter_strength}};
  const json seeds = {{"base", o.seed}, {"sources", o.source_seed}};

  auto emit = [&](const std::string& path, const synth::LabeledDataset& ds, std::int64_t offset) {
    json meta = provenance(ctx, {}, seeds, options);
    meta["classes"] = ds.classes;
    meta["class_counts"] = ds.class_counts();
    meta["records"] = ds.size();
    meta["image_dims"] = ds.image_dims();
    meta["base_offset"] = offset;
    meta["sources"] = src;
    write_with_sidecar(path, synth::encode_dataset(ds), std::move(meta));
    log("[gen] wrote " + path + " (" + std::to_string(ds.size()) + " records, " + std::to_string(ds.num_classes()) +
        " classes)");
  };

  if (o.test_per_class > 0) {
    const auto split = synth::sample_split(specs, o.seed, o.per_class, o.test_per_class, o.size, real);
    emit(o.out, split.train, 0);
    emit(o.test_out, split.test, static_cast<std::int64_t>(o.classes) * o.per_class);
  } else {
    emit(o.out, synth::sample_dataset(specs, o.seed, o.per_class, o.size, real, 0), 0);
  }
}

struct TrainOpts {
  std::string data, out, arch = "full";
  int epochs = 3, batch = 32, base_channels = 16, max_channels = 128;
  double lr = 1e-3;
  std::uint64_t seed = 1;
};

void cmd_train(const Context& ctx, const TrainOpts& o) {
  require_file(o.data);
  require_parent(o.out);
  const Input data = read_input(o.data);
  const auto ds = load_dataset(data);
  const auto dims = ds.image_dims();
  if (dims[0] != dims[1]) throw FormatError("training images must be square, got " + dims_to_string(dims));

  attr::ArchConfig cfg;
  cfg.input_size = dims[0];
  cfg.in_channels = dims[2];
  cfg.base_channels = o.base_channels;
  cfg.max_channels = o.max_channels;
  cfg.variant = attr::Variant::parse(o.arch);
  cfg.num_classes = ds.num_classes();
  cfg.validate();
  attr::TrainHyper hyper{o.lr, o.batch, o.epochs, o.seed};
  hyper.validate();

  attr::Classifier net(cfg, o.seed);
  log("[train] " + cfg.variant.to_string() + ", " + std::to_string(ds.size()) + " images, " +
      std::to_string(cfg.num_classes) + " classes");
  const auto history = attr::train(net, ds, hyper, {}, [&](const attr::EpochStats& s) {
    check_finite_history(s);
    log("[train] epoch " + std::to_string(s.epoch + 1) + "/" + std::to_string(o.epochs) + " loss " +
        fmt("%.6f", s.loss) + " acc " + fmt("%.4f", s.accuracy));
  });

  json meta = provenance(ctx, {&data}, {{"init", o.seed}, {"shuffle", o.seed}},
                         {{"arch", o.arch}, {"epochs", o.epochs}, {"batch", o.batch}, {"lr", o.lr},
                          {"base_channels", o.base_channels}, {"max_channels", o.max_channels}});
  meta["history"] = history_json(history);
  save_classifier(o.out, net, ds.classes, std::move(meta));
  log("[train] wrote " + o.out);
}

struct EvalOpts {
  std::string model, data, out, baselines;
  int knn_k = 1, eigen_k = 0;
};

void cmd_eval(const Context& ctx, const EvalOpts& o) {
  require_file(o.model);
  require_file(sidecar_path(o.model));
  require_file(o.data);
  if (!o.baselines.empty()) require_file(o.baselines);
  if (o.out.empty()) throw ArgumentError("output directory is empty");

  const Input ckpt = read_input(o.model), data = read_input(o.data);
  auto loaded = load_classifier(ckpt);
  const auto test = load_dataset(data);
  check_classes(loaded.classes, test.classes, "checkpoint", "dataset");
  check_image_dims(loaded.net.config(), test);

  std::vector<report::MethodResult> results;
  std::optional<Input> base_in;
  if (!o.baselines.empty()) {
    base_in = read_input(o.baselines);
    const auto train = load_dataset(*base_in);
    check_classes(train.classes, test.classes, "baseline training set", "dataset");
    const auto imgs = images_of(test);
    const auto knn = baselines::knn_fit(train);
    results.push_back({"knn", confusion_of(baselines::knn_classify_batch(knn, imgs, o.knn_k), test)});
    const auto eig = baselines::eigenface_fit(train, o.eigen_k);
    std::vector<int> pred;
    for (const auto& im : imgs) pred.push_back(baselines::eigenface_classify(eig, im));
    results.push_back({"eigenface", confusion_of(pred, test)});
    const auto prnu = baselines::prnu_fit(train);
    pred.clear();
    for (const auto& im : imgs) pred.push_back(baselines::prnu_classify(prnu, im));
    results.push_back({"prnu", confusion_of(pred, test)});
  }
  results.push_back({"ours", attr::evaluate(loaded.net, test).confusion});
  for (const auto& r : results) log("[eval] " + r.method + " accuracy " + fmt("%.4f", r.confusion.accuracy()));

  make_dir(o.out);
  const auto files = report::write_report(o.out, results, test.classes);
  std::vector<const Input*> inputs{&ckpt, &data};
  if (base_in) inputs.push_back(&*base_in);
  json meta = provenance(ctx, inputs, json::object(), {{"knn_k", o.knn_k}, {"eigen_k", o.eigen_k}});
  meta["outputs"] = file_list(files);
  io::write_file_atomic(fs::path(o.out) / "provenance.json", dump(meta));
  log("[eval] wrote " + std::to_string(files.size()) + " files to " + o.out);
}

struct AttackOpts {
  std::string data, out, kind = "noise";
  std::vector<std::string> params;
  std::uint64_t seed = 0;
  bool trace = false;
};

void cmd_attack(const Context& ctx, const AttackOpts& o) {
  require_file(o.data);
  require_parent(o.out);
  const auto spec = make_attack(o.kind, o.params, o.seed);
  const Input data = read_input(o.data);
  const auto ds = load_dataset(data);
  std::vector<attacks::Trace> traces;
  const auto attacked = attacks::attack_dataset(ds, spec, o.trace ? &traces : nullptr);

  json meta = provenance(ctx, {&data}, {{"attack", spec.seed}}, {{"kind", o.kind}, {"params", o.params}});
  meta["attack"] = spec.to_json();
  meta["classes"] = attacked.classes;
  if (o.trace) {
    json t = json::array();
    for (const auto& tr : traces) {
      json stages = json::array();
      for (const auto& e : tr)
        stages.push_back({{"stage", e.stage}, {"applied", e.applied}, {"sub_seed", e.sub_seed}, {"params", e.params}});
      t.push_back(std::move(stages));
    }
    meta["trace"] = std::move(t);
  }
  write_with_sidecar(o.out, synth::encode_dataset(attacked), std::move(meta));
  log("[attack] " + spec.to_string() + " -> " + o.out);
}

struct ImmunizeOpts {
  std::string model, data, out, eval, kind = "noise";
  std::vector<std::string> params;
  std::uint64_t seed = 0, train_seed = 9;
  int epochs = 3, batch = 32;
  double lr = 1e-3;
};

void cmd_immunize(const Context& ctx, const ImmunizeOpts& o) {
  require_file(o.model);
  require_file(sidecar_path(o.model));
  require_file(o.data);
  if (!o.eval.empty()) require_file(o.eval);
  require_parent(o.out);
  const auto spec = make_attack(o.kind, o.params, o.seed);
  attr::TrainHyper hyper{o.lr, o.batch, o.epochs, o.train_seed};
  hyper.validate();

  const Input ckpt = read_input(o.model), data = read_input(o.data);
  auto loaded = load_classifier(ckpt);
  const auto train = load_dataset(data);
  check_classes(loaded.classes, train.classes, "checkpoint", "dataset");
  check_image_dims(loaded.net.config(), train);

  std::optional<Input> eval_in;
  std::optional<synth::LabeledDataset> test, test_attacked;
  if (!o.eval.empty()) {
    eval_in = read_input(o.eval);
    test = load_dataset(*eval_in);
    check_classes(loaded.classes, test->classes, "checkpoint", "evaluation set");
    test_attacked = attacks::attack_dataset(*test, spec);
  }
  json evals = json::array();
  auto report_eval = [&](const std::string& when) {
    if (!test) return;
    const double clean = attr::evaluate(loaded.net, *test).accuracy;
    const double hit = attr::evaluate(loaded.net, *test_attacked).accuracy;
    log("[immunize] " + when + ": clean " + fmt("%.4f", clean) + ", attacked " + fmt("%.4f", hit));
    evals.push_back({{"when", when}, {"clean", clean}, {"attacked", hit}});
  };

  report_eval("before");
  const auto history = attacks::immunize(loaded.net, train, spec, hyper, [&](const attr::EpochStats& s) {
    check_finite_history(s);
    log("[immunize] epoch " + std::to_string(s.epoch + 1) + "/" + std::to_string(o.epochs) + " loss " +
        fmt("%.6f", s.loss) + " acc " + fmt("%.4f", s.accuracy));
  });
  report_eval("after");

  std::vector<const Input*> inputs{&ckpt, &data};
  if (eval_in) inputs.push_back(&*eval_in);
  json meta = provenance(ctx, inputs, {{"attack", spec.seed}, {"shuffle", o.train_seed}},
                         {{"kind", o.kind}, {"params", o.params}, {"epochs", o.epochs}, {"batch", o.batch}, {"lr", o.lr}});
  meta["attack"] = spec.to_json();
  meta["history"] = history_json(history);
  if (!evals.empty()) meta["evaluation"] = evals;
  save_classifier(o.out, loaded.net, loaded.classes, std::move(meta));
  log("[immunize] wrote " + o.out);
}

struct VisualizeOpts {
  std::string data, test, out, load;
  int epochs = 8, batch = 32, n_critic = 1, width = 16, max_width = 64;
  double lr = 1e-3, critic_lr = 1e-4, bank_lr = 1e-3;
  double w_pix = 20.0, w_adv = 0.1, w_cls = 1.0, w_gp = 10.0;
  std::uint64_t seed = 1;
  bool no_cosine = false;
};

void cmd_visualize(const Context& ctx, const VisualizeOpts& o) {
  require_file(o.data);
  if (!o.test.empty()) require_file(o.test);
  if (!o.load.empty()) {
    require_file(o.load);
    require_file(sidecar_path(o.load));
  }
  if (o.out.empty()) throw ArgumentError("output directory is empty");

  const Input data = read_input(o.data);
  const auto train = load_dataset(data);
  std::optional<Input> test_in;
  synth::LabeledDataset test = train;
  if (!o.test.empty()) {
    test_in = read_input(o.test);
    test = load_dataset(*test_in);
    check_classes(train.classes, test.classes, "training set", "evaluation set");
  }
  const auto dims = train.image_dims();
  if (dims[0] != dims[1]) throw FormatError("images must be square, got " + dims_to_string(dims));

  vis::VisHyper hyper;
  hyper.weights = {o.w_pix, o.w_adv, o.w_cls, o.w_gp};
  hyper.n_critic = o.n_critic;
  hyper.lr = o.lr;
  hyper.critic_lr = o.critic_lr;
  hyper.bank_lr = o.bank_lr;
  hyper.batch = o.batch;
  hyper.epochs = o.epochs;
  hyper.seed = o.seed;
  hyper.cosine_decay = !o.no_cosine;
  hyper.validate();

  std::optional<Input> load_in;
  vis::VisNets nets;
  json history = json::array();
  if (!o.load.empty()) {
    load_in = read_input(o.load);
    const json side = json::parse(io::read_file(sidecar_path(o.load)));
    nets = vis::decode_vis(vis::VisConfig::from_json(side.at("vis")), load_in->bytes);
    check_classes(side.at("classes").get<std::vector<std::string>>(), train.classes, "checkpoint", "dataset");
  } else {
    vis::VisConfig cfg;
    cfg.size = dims[0];
    cfg.channels = dims[2];
    cfg.width = o.width;
    cfg.max_width = o.max_width;
    cfg.num_classes = train.num_classes();
    cfg.validate();
    nets = vis::init_vis(cfg, o.seed);
    vis::train_vis(nets, train, hyper, [&](const vis::VisEpochStats& s) {
      log("[visualize] epoch " + std::to_string(s.epoch + 1) + "/" + std::to_string(o.epochs) + " pix " +
          fmt("%.5f", s.pix) + " cls " + fmt("%.5f", s.cls) + " adv " + fmt("%.5f", s.adv) + " critic " +
          fmt("%.5f", s.critic) + " acc " + fmt("%.4f", s.accuracy));
      history.push_back({{"epoch", s.epoch}, {"pix", s.pix}, {"adv", s.adv}, {"cls", s.cls}, {"critic", s.critic},
                         {"accuracy", s.accuracy}});
    });
  }
  if (nets.config.size != test.image_dims()[0] || nets.config.channels != test.image_dims()[2])
    throw FormatError("evaluation images do not match the visualization network");

  make_dir(o.out);
  std::vector<const Input*> inputs{&data};
  if (test_in) inputs.push_back(&*test_in);
  if (load_in) inputs.push_back(&*load_in);
  const json options = {{"epochs", o.epochs}, {"batch", o.batch},       {"n_critic", o.n_critic},
                        {"lr", o.lr},         {"critic_lr", o.critic_lr}, {"bank_lr", o.bank_lr},
                        {"pix", o.w_pix},     {"adv", o.w_adv},         {"cls", o.w_cls},
                        {"gp", o.w_gp},       {"cosine_decay", !o.no_cosine}};
  const json seeds = {{"init", o.seed}, {"shuffle", o.seed}};

  std::vector<fs::path> files;
  if (o.load.empty()) {
    json meta = provenance(ctx, inputs, seeds, options);
    meta["vis"] = nets.config.to_json();
    meta["classes"] = train.classes;
    meta["history"] = history;
    const fs::path ckpt = fs::path(o.out) / "vis.gfpc";
    write_with_sidecar(ckpt, vis::encode_vis(nets), std::move(meta));
    files.push_back(ckpt);
  }

  const auto pred = vis::attribute(nets, images_of(test));
  const std::vector<report::MethodResult> results{{"visnet", confusion_of(pred, test)}};
  log("[visualize] attribution accuracy " + fmt("%.4f", results[0].confusion.accuracy()));
  for (auto& f : report::write_report(o.out, results, test.classes)) files.push_back(f);
  vis::fingerprint_report(nets, test, o.out);
  for (const auto& entry : fs::directory_iterator(o.out)) {
    const auto name = entry.path().filename().string();
    if (entry.path().extension() == ".pgm" || entry.path().extension() == ".ppm" || name == "mapping.json" ||
        name == "response.csv")
      files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  json meta = provenance(ctx, inputs, seeds, options);
  meta["outputs"] = file_list(files);
  io::write_file_atomic(fs::path(o.out) / "provenance.json", dump(meta));
  log("[visualize] wrote " + std::to_string(files.size()) + " files to " + o.out);
}

struct FdOpts {
  std::string data, model, out;
  int pca = 0;
  std::uint64_t split_seed = 3;
};

metrics::FeatureSet group_rows(const synth::LabeledDataset& ds, const std::vector<Eigen::VectorXd>& rows) {
  std::map<int, std::vector<const Eigen::VectorXd*>> by;
  for (std::size_t i = 0; i < ds.size(); ++i) by[ds.records[i].label].push_back(&rows[i]);
  metrics::FeatureSet out;
  for (const auto& [label, list] : by) {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(list.size()), list.front()->size());
    for (std::size_t r = 0; r < list.size(); ++r) m.row(static_cast<Eigen::Index>(r)) = list[r]->transpose();
    out[label] = std::move(m);
  }
  return out;
}

void cmd_fdratio(const Context& ctx, const FdOpts& o) {
  require_file(o.data);
  if (!o.model.empty()) {
    require_file(o.model);
    require_file(sidecar_path(o.model));
  }
  require_parent(o.out);
  const Input data = read_input(o.data);
  const auto ds = load_dataset(data);

  std::vector<report::NamedRatio> ratios;
  auto add = [&](const std::string& name, const std::vector<Eigen::VectorXd>& rows) {
    const auto r = metrics::fd_ratio(group_rows(ds, rows), o.split_seed);
    log("[fdratio] " + name + ": inter " + fmt("%.6g", r.inter) + " intra " + fmt("%.6g", r.intra) + " ratio " +
        fmt("%.4f", r.ratio));
    ratios.push_back({name, r});
  };

  std::vector<Eigen::VectorXd> rows;
  for (const auto& r : ds.records)
    rows.push_back(Eigen::Map<const Eigen::VectorXf>(r.image.ptr(), static_cast<Eigen::Index>(r.image.size())).cast<double>());
  add("pixel", rows);

  if (o.pca > 0) {
    const auto eig = baselines::eigenface_fit(ds, o.pca);
    rows.clear();
    for (const auto& r : ds.records) rows.push_back(baselines::eigenface_project(eig, r.image));
    add("pca", rows);
  }

  std::optional<Input> ckpt;
  if (!o.model.empty()) {
    ckpt = read_input(o.model);
    auto loaded = load_classifier(*ckpt);
    check_classes(loaded.classes, ds.classes, "checkpoint", "dataset");
    check_image_dims(loaded.net.config(), ds);
    const auto feats = loaded.net.extract_features(images_of(ds));
    rows.clear();
    for (const auto& f : feats)
      rows.push_back(Eigen::Map<const Eigen::VectorXf>(f.data(), static_cast<Eigen::Index>(f.size())).cast<double>());
    add("classifier", rows);
  }

  std::vector<const Input*> inputs{&data};
  if (ckpt) inputs.push_back(&*ckpt);
  json meta = provenance(ctx, inputs, {{"split", o.split_seed}}, {{"pca", o.pca}});
  const std::string csv = report::fd_ratio_csv(ratios);
  write_with_sidecar(o.out, io::Bytes(csv.begin(), csv.end()), std::move(meta));
  log("[fdratio] wrote " + o.out);
}

// ---------------------------------------------------------------------------------------------

// Turns a flat JSON object of option values into "--key value" arguments. Explicit command-line
// flags are placed after these and win.
std::vector<std::string> config_args(const json& cfg) {
  if (!cfg.is_object()) throw FormatError("--config must hold a JSON object");
  std::vector<std::string> out;
  for (const auto& [key, value] : cfg.items()) {
    const std::string flag = "--" + key;
    auto scalar = [&](const json& v) -> std::string {
      if (v.is_string()) return v.get<std::string>();
      if (v.is_number_integer() || v.is_number_unsigned() || v.is_number_float()) return v.dump();
      throw FormatError("--config value for '" + key + "' must be a string, number, boolean or array");
    };
    if (value.is_boolean()) {
      if (value.get<bool>()) out.push_back(flag);
    } else if (value.is_array()) {
      for (const auto& v : value) {
        out.push_back(flag);
        out.push_back(scalar(v));
      }
    } else {
      out.push_back(flag);
      out.push_back(scalar(value));
    }
  }
  return out;
}

const CLI::Range kPositive(1, std::numeric_limits<int>::max());

int fail(int code, const std::string& msg) {
  std::cerr << "gfp: " << msg << '\n';
  return code;
}

int dispatch(const std::vector<std::string>& raw) {
  Context ctx;
  ctx.args = raw;

  // --config is expanded before parsing so its values pass through the same validators.
  std::vector<std::string> args;
  std::string config_path;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (raw[i] == "--config") {
      if (i + 1 >= raw.size()) return fail(kUsage, "--config needs a file");
      config_path = raw[++i];
    } else if (raw[i].rfind("--config=", 0) == 0) {
      config_path = raw[i].substr(9);
    } else {
      args.push_back(raw[i]);
    }
  }
  if (!config_path.empty()) {
    require_file(config_path);
    ctx.config = json::parse(io::read_file(config_path));
    const auto extra = config_args(ctx.config);
    auto sub = std::find_if(args.begin(), args.end(), [](const std::string& a) {
      return std::find(std::begin(kSubcommands), std::end(kSubcommands), a) != std::end(kSubcommands);
    });
    if (sub == args.end()) return fail(kUsage, "--config given without a subcommand");
    args.insert(sub + 1, extra.begin(), extra.end());
  }

  CLI::App app{"Attribution of images to synthetic generator fingerprints", "gfp"};
  app.set_version_flag("--version", GFP_VERSION);
  app.require_subcommand(1);
  app.fallthrough();
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.add_flag("--deterministic", ctx.deterministic, "Single-threaded numerics");
  app.add_option("--config", config_path, "JSON object of option overrides (explicit flags win)");

  GenOpts gen;
  auto* g = app.add_subcommand("gen", "Generate a synthetic fingerprinted dataset (GFPD)");
  g->add_option("--classes", gen.classes, "Number of classes including the real class")->check(CLI::Range(2, 255));
  g->add_option("--per-class", gen.per_class, "Images per class")->check(kPositive);
  g->add_option("--test-per-class", gen.test_per_class, "Held-out images per class, written to --test-out")
      ->check(CLI::NonNegativeNumber);
  g->add_option("--size", gen.size, "Image side length")->check(CLI::Range(8, 4096));
  g->add_option("--seed", gen.seed, "Base image seed");
  g->add_option("--source-seed", gen.source_seed, "Seed for the generator fingerprints");
  g->add_option("--amplitude", gen.amplitude, "Fingerprint pattern amplitude");
  g->add_option("--filter-strength", gen.filter_strength, "Sharpening mix per source");
  g->add_flag("--no-real", gen.no_real, "Omit the untransformed real class");
  g->add_option("--out", gen.out, "Output dataset")->required();
  g->add_option("--test-out", gen.test_out, "Held-out dataset");

  TrainOpts train;
  auto* t = app.add_subcommand("train", "Train an attribution classifier");
  t->add_option("--data", train.data, "Training dataset")->required();
  t->add_option("--out", train.out, "Output checkpoint (GFPC)")->required();
  t->add_option("--arch", train.arch, "full | predown:R | residual:R | postpool:R");
  t->add_option("--epochs", train.epochs)->check(CLI::NonNegativeNumber);
  t->add_option("--batch", train.batch)->check(kPositive);
  t->add_option("--lr", train.lr)->check(CLI::NonNegativeNumber);
  t->add_option("--seed", train.seed, "Initialization and shuffling seed");
  t->add_option("--base-channels", train.base_channels)->check(kPositive);
  t->add_option("--max-channels", train.max_channels)->check(kPositive);

  EvalOpts ev;
  auto* e = app.add_subcommand("eval", "Evaluate a classifier and optional baselines");
  e->add_option("--model", ev.model, "Classifier checkpoint")->required();
  e->add_option("--data", ev.data, "Evaluation dataset")->required();
  e->add_option("--out", ev.out, "Report directory")->required();
  e->add_option("--baselines", ev.baselines, "Training set for the kNN, Eigenface and PRNU baselines");
  e->add_option("--knn-k", ev.knn_k)->check(kPositive);
  e->add_option("--eigen-k", ev.eigen_k, "Eigenface components, 0 = default")->check(CLI::NonNegativeNumber);

  AttackOpts at;
  const auto kinds = CLI::IsMember({"noise", "blur", "crop", "jpeg", "relight", "combo"});
  auto* a = app.add_subcommand("attack", "Apply a seeded perturbation to every image");
  a->add_option("--data", at.data, "Input dataset")->required();
  a->add_option("--out", at.out, "Output dataset")->required();
  a->add_option("--kind", at.kind)->check(kinds);
  a->add_option("--param", at.params, "Attack parameter key=value, repeatable")
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  a->add_option("--seed", at.seed, "Attack seed");
  a->add_flag("--trace", at.trace, "Record per-image sampled parameters in the sidecar");

  ImmunizeOpts im;
  auto* i = app.add_subcommand("immunize", "Fine-tune a classifier on attacked training images");
  i->add_option("--model", im.model, "Classifier checkpoint")->required();
  i->add_option("--data", im.data, "Training dataset")->required();
  i->add_option("--out", im.out, "Output checkpoint")->required();
  i->add_option("--eval", im.eval, "Held-out set to report clean and attacked accuracy on");
  i->add_option("--kind", im.kind)->check(kinds);
  i->add_option("--param", im.params, "Attack parameter key=value, repeatable")
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  i->add_option("--seed", im.seed, "Attack seed");
  i->add_option("--train-seed", im.train_seed, "Shuffling seed");
  i->add_option("--epochs", im.epochs)->check(CLI::NonNegativeNumber);
  i->add_option("--batch", im.batch)->check(kPositive);
  i->add_option("--lr", im.lr)->check(CLI::NonNegativeNumber);

  VisualizeOpts vz;
  auto* v = app.add_subcommand("visualize", "Train the fingerprint visualization network and write fingerprints");
  v->add_option("--data", vz.data, "Training dataset")->required();
  v->add_option("--test", vz.test, "Held-out dataset for attribution and the response matrix");
  v->add_option("--out", vz.out, "Output directory")->required();
  v->add_option("--load", vz.load, "Existing vis.gfpc; skips training");
  v->add_option("--epochs", vz.epochs)->check(CLI::NonNegativeNumber);
  v->add_option("--batch", vz.batch)->check(kPositive);
  v->add_option("--n-critic", vz.n_critic)->check(kPositive);
  v->add_option("--width", vz.width)->check(kPositive);
  v->add_option("--max-width", vz.max_width)->check(kPositive);
  v->add_option("--lr", vz.lr)->check(CLI::NonNegativeNumber);
  v->add_option("--critic-lr", vz.critic_lr)->check(CLI::NonNegativeNumber);
  v->add_option("--bank-lr", vz.bank_lr)->check(CLI::NonNegativeNumber);
  v->add_option("--pix-weight", vz.w_pix)->check(CLI::NonNegativeNumber);
  v->add_option("--adv-weight", vz.w_adv)->check(CLI::NonNegativeNumber);
  v->add_option("--cls-weight", vz.w_cls)->check(CLI::NonNegativeNumber);
  v->add_option("--gp-weight", vz.w_gp)->check(CLI::NonNegativeNumber);
  v->add_option("--seed", vz.seed, "Initialization and sampling seed");
  v->add_flag("--no-cosine", vz.no_cosine, "Keep the learning rates constant");

  FdOpts fd;
  auto* f = app.add_subcommand("fdratio", "Inter/intra-class Frechet distance ratios of feature sets");
  f->add_option("--data", fd.data, "Dataset")->required();
  f->add_option("--model", fd.model, "Classifier checkpoint for learned features");
  f->add_option("--out", fd.out, "Output CSV")->required();
  f->add_option("--pca", fd.pca, "Also report PCA features with this many components")->check(CLI::NonNegativeNumber);
  f->add_option("--split-seed", fd.split_seed);

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kOk : kUsage;
  }

  if (ctx.deterministic) Eigen::setNbThreads(1);
  ctx.subcommand = app.get_subcommands().front()->get_name();
  if (*g) cmd_gen(ctx, gen);
  else if (*t) cmd_train(ctx, train);
  else if (*e) cmd_eval(ctx, ev);
  else if (*a) cmd_attack(ctx, at);
  else if (*i) cmd_immunize(ctx, im);
  else if (*v) cmd_visualize(ctx, vz);
  else if (*f) cmd_fdratio(ctx, fd);
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  try {
    return dispatch(args);
  } catch (const ArgumentError& e) {
    return fail(kUsage, e.what());
  } catch (const IoError& e) {
    return fail(kIo, e.what());
  } catch (const FormatError& e) {
    return fail(kFormat, e.what());
  } catch (const ShapeError& e) {
    return fail(kFormat, e.what());
  } catch (const nlohmann::json::exception& e) {
    return fail(kFormat, std::string("malformed JSON: ") + e.what());
  } catch (const NumericalError& e) {
    return fail(kNumerical, e.what());
  } catch (const std::exception& e) {
    return fail(kFailure, e.what());
  }
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args);
}

}  // namespace gfp::cli
