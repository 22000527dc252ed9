#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lightnn/costmodel.hpp"
#include "lightnn/dataset.hpp"
#include "lightnn/inference.hpp"
#include "lightnn/model_io.hpp"
#include "lightnn/network.hpp"
#include "lightnn/trainer.hpp"
#include "lightnn/variant.hpp"

namespace fs = std::filesystem;
using namespace lightnn;

namespace {

std::string default_mnist_dir() {
  if (const char* env = std::getenv("LIGHTNN_MNIST_DIR")) return env;
  return "data/mnist";
}

ModelVariant parse_variant(const std::string& name) {
  auto v = variant_from_name(name);
  if (!v) {
    std::string known;
    for (int i = 0; i < kNumVariants; ++i) {
      if (i) known += ", ";
      known += variant_name(static_cast<ModelVariant>(i));
    }
    throw std::invalid_argument("unknown variant '" + name + "' (one of: " + known + ")");
  }
  return *v;
}

struct DataFlags {
  std::string data_dir;
  std::string csv_path;
  int label_column = -1;
  bool csv_header = false;
  float test_fraction = 1.f / 6.f;
};

void add_data_flags(CLI::App* cmd, DataFlags& flags) {
  cmd->add_option("--data-dir", flags.data_dir,
                  "MNIST IDX directory (default $LIGHTNN_MNIST_DIR or data/mnist)");
  cmd->add_option("--csv", flags.csv_path, "CSV dataset instead of MNIST");
  cmd->add_option("--label-column", flags.label_column,
                  "CSV label column, negative counts from the end (default -1)");
  cmd->add_flag("--csv-header", flags.csv_header, "CSV file has a header row");
  cmd->add_option("--test-fraction", flags.test_fraction,
                  "CSV-only: fraction of rows kept for test (default 1/6)");
}

DatasetHandle load_data(const DataFlags& flags, float validation_fraction) {
  if (!flags.csv_path.empty()) {
    DatasetHandle data = load_csv(flags.csv_path, flags.label_column, flags.csv_header);
    split_tail(data, validation_fraction, flags.test_fraction);
    return data;
  }
  const std::string dir = flags.data_dir.empty() ? default_mnist_dir() : flags.data_dir;
  DatasetHandle train = load_idx(dir + "/train-images-idx3-ubyte",
                                 dir + "/train-labels-idx1-ubyte");
  DatasetHandle test = load_idx(dir + "/t10k-images-idx3-ubyte",
                                dir + "/t10k-labels-idx1-ubyte");
  return merge_train_test(train, test, validation_fraction);
}

// Flattens image datasets to the net's input shape when they differ only by
// reshape (e.g. 28x28 images into a 784-wide dense layer).
std::vector<int> batch_item_shape(const NetworkSpec& net, const DatasetHandle& data) {
  if (net.input_shape.empty()) {
    std::vector<int> shape(data.inputs.shape.begin() + 1, data.inputs.shape.end());
    return shape;
  }
  int64_t want = 1;
  for (int d : net.input_shape) want *= d;
  if (want != data.item_numel())
    throw std::invalid_argument(
        "dataset items have " + std::to_string(data.item_numel()) +
        " values but the network expects " + std::to_string(want));
  return net.input_shape;
}

struct EvalOutcome {
  int64_t items = 0;
  int64_t errors = 0;
  std::vector<int64_t> confusion;  // [true * C + predicted]
  int num_classes = 0;
};

template <typename InferFn>
EvalOutcome evaluate(const DatasetHandle& data, int64_t begin, int64_t end,
                     const std::vector<int>& item_shape, int num_classes,
                     InferFn&& infer) {
  EvalOutcome out;
  out.num_classes = num_classes;
  out.confusion.assign(static_cast<size_t>(num_classes) * num_classes, 0);
  constexpr int kChunk = 1000;
  std::vector<int64_t> indices;
  for (int64_t at = begin; at < end; at += kChunk) {
    const int count = static_cast<int>(std::min<int64_t>(kChunk, end - at));
    indices.resize(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) indices[static_cast<size_t>(i)] = at + i;
    const Tensor batch = make_batch(data, indices.data(), count, item_shape);
    const std::vector<int> labels = gather_labels(data, indices.data(), count);
    const Tensor scores = infer(batch);
    for (int i = 0; i < count; ++i) {
      const int pred = argmax_row(scores, i);
      const int truth = labels[static_cast<size_t>(i)];
      if (pred != truth) ++out.errors;
      ++out.confusion[static_cast<size_t>(truth) * num_classes + pred];
    }
    out.items += count;
  }
  return out;
}

void print_outcome(const EvalOutcome& out) {
  std::printf("items: %lld\n", static_cast<long long>(out.items));
  std::printf("errors: %lld\n", static_cast<long long>(out.errors));
  const double err = out.items ? static_cast<double>(out.errors) / out.items : 0.0;
  std::printf("accuracy: %.6f\n", 1.0 - err);
  std::printf("error_rate: %.6f\n", err);
  std::printf("confusion (rows=true, cols=predicted):\n");
  for (int t = 0; t < out.num_classes; ++t) {
    for (int p = 0; p < out.num_classes; ++p) {
      if (p) std::printf(" ");
      std::printf("%lld",
                  static_cast<long long>(
                      out.confusion[static_cast<size_t>(t) * out.num_classes + p]));
    }
    std::printf("\n");
  }
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp);
    out << text;
    if (!out) throw std::runtime_error("write failed for " + tmp);
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw std::runtime_error("cannot move " + tmp + " to " + path);
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

int cmd_train(const std::string& preset, const std::string& variant_name_,
              uint64_t seed, const TrainConfig& cfg, const DataFlags& data_flags,
              const std::string& out_dir) {
  const ModelVariant variant = parse_variant(variant_name_);
  const NetworkSpec net = make_preset(preset, variant);
  const DatasetHandle data = load_data(data_flags, cfg.validation_fraction);

  fs::create_directories(out_dir);
  const auto started = std::chrono::steady_clock::now();
  const TrainResult result = run_training(data, net, cfg, seed, &std::cout);
  const double elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

  write_text_file(out_dir + "/metrics.csv", metrics_csv(result.metrics));
  save_checkpoint(result.best_state, net, config_digest(cfg), out_dir + "/best.lnnc");

  const EpochMetrics& best = result.metrics[static_cast<size_t>(result.best_epoch - 1)];
  nlohmann::ordered_json run;
  run["preset"] = preset;
  run["variant"] = variant_name(variant);
  run["seed"] = seed;
  run["epochs"] = cfg.epochs;
  run["batch_size"] = cfg.batch_size;
  run["eta"] = cfg.eta;
  run["eta_decay_epoch"] = cfg.eta_decay_epoch;
  run["eta_decay_factor"] = cfg.eta_decay_factor;
  run["rounding"] = rounding_name(cfg.rounding);
  run["optimizer"] = optimizer_name(cfg.optimizer);
  run["validation_fraction"] = cfg.validation_fraction;
  run["config_digest"] = config_digest(cfg);
  run["best_epoch"] = result.best_epoch;
  run["val_error"] = best.val_err;
  run["test_error"] = best.test_err;
  run["elapsed_seconds"] = elapsed;
  write_text_file(out_dir + "/run.json", run.dump(2) + "\n");

  std::printf("best epoch %d val_err %.4f test_err %.4f\n", result.best_epoch,
              best.val_err, best.test_err);
  std::printf("wrote %s/metrics.csv, best.lnnc, run.json\n", out_dir.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// quantize
// ---------------------------------------------------------------------------

int cmd_quantize(const std::string& ckpt_path, const std::string& out_path) {
  const Checkpoint ck = load_checkpoint(ckpt_path);
  const QuantizedModel model = finalize(ck.state, ck.net);
  save_model(model, out_path);
  std::printf("variant: %s\n", variant_name(ck.net.variant));
  std::printf("storage_bits: %lld\n",
              static_cast<long long>(storage_bits(ck.net, ck.net.variant)));
  std::printf("wrote %s\n", out_path.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

int cmd_eval(const std::string& model_path, const DataFlags& data_flags,
             const std::string& split, int fixed_bits, int frac_bits,
             bool quantize_first, bool binary_fast, bool fold_bn) {
  QuantizedModel model = load_model(model_path);
  if (fold_bn) model = fold_batchnorm(model);

  const bool fixed = fixed_bits > 0 || frac_bits > 0;
  if (fixed && (fixed_bits <= 0 || frac_bits <= 0))
    throw std::invalid_argument("--fixed-bits and --frac-bits must be given together");
  if (fixed && binary_fast)
    throw std::invalid_argument("--fixed-bits conflicts with --binary-fast");
  if (fixed && model.net.variant == ModelVariant::conventional && !quantize_first)
    throw std::invalid_argument(
        "fixed-point eval of a conventional float model is unsupported without "
        "--quantize-first");

  DatasetHandle data = load_data(data_flags, 0.1f);
  int64_t begin, end;
  if (split == "test") {
    begin = data.test_begin;
    end = data.test_end;
  } else if (split == "train") {
    begin = data.train_begin;
    end = data.train_end;
  } else if (split == "all") {
    begin = 0;
    end = data.count();
  } else {
    throw std::invalid_argument("unknown split '" + split + "' (test|train|all)");
  }

  // resolve conv input dims from the data when the file could not pin them
  NetworkSpec& net = model.net;
  if (net.input_shape.empty() && !net.layers.empty() &&
      net.layers.front().kind == LayerKind::conv2d) {
    std::vector<int> item(data.inputs.shape.begin() + 1, data.inputs.shape.end());
    if (item.size() == 2) item.insert(item.begin(), 1);
    net.input_shape = item;
    layer_shapes(net);
  }

  const std::vector<int> item_shape = batch_item_shape(net, data);
  const FixedPointFormat fmt{fixed_bits, frac_bits};
  const EvalOutcome out = evaluate(
      data, begin, end, item_shape, net.num_classes, [&](const Tensor& batch) {
        if (binary_fast) return infer_binary_fast(model, batch);
        if (fixed) return infer_fixed(model, batch, fmt, quantize_first, nullptr);
        return infer_float(model, batch);
      });
  print_outcome(out);
  return 0;
}

// ---------------------------------------------------------------------------
// estimate
// ---------------------------------------------------------------------------

int cmd_estimate(const std::string& model_path, const std::string& table_path,
                 const std::string& out_path, const std::string& format) {
  const QuantizedModel model = load_model(model_path);
  if (model.net.input_shape.empty())
    throw std::invalid_argument(
        "cannot derive the input shape from " + model_path +
        "; operation counting needs a dense-first or square-conv model");
  const CostTable table =
      table_path.empty() ? default_cost_table()
                         : cost_table_from_json(read_text_file(table_path));
  const OpCounts counts = count_ops(model.net, model.net.variant);
  const CostReport report = estimate(counts, table);
  const std::string doc = emit_report(report, format);
  if (out_path.empty()) {
    std::fputs(doc.c_str(), stdout);
  } else {
    write_text_file(out_path, doc);
    std::printf("model: %s\n", report.model.c_str());
    std::printf("total_energy: %.6f\n", report.total);
    std::printf("wrote %s\n", out_path.c_str());
  }
  return 0;
}

// ---------------------------------------------------------------------------
// inspect
// ---------------------------------------------------------------------------

void print_layer(size_t idx, const LayerSpec& l) {
  switch (l.kind) {
    case LayerKind::dense:
      std::printf("  %zu: dense %d -> %d\n", idx, l.in, l.out);
      break;
    case LayerKind::conv2d:
      std::printf("  %zu: conv2d %d -> %d k=%dx%d stride=%d pad=%d\n", idx, l.in_ch,
                  l.out_ch, l.kh, l.kw, l.stride, l.pad);
      break;
    case LayerKind::maxpool:
      std::printf("  %zu: maxpool window=%d stride=%d\n", idx, l.window, l.stride);
      break;
    case LayerKind::batchnorm:
      std::printf("  %zu: batchnorm %d\n", idx, l.features);
      break;
    case LayerKind::activation:
      std::printf("  %zu: activation %s\n", idx,
                  l.act == ActivationKind::htanh_sign ? "htanh_sign" : "relu");
      break;
    case LayerKind::dropout:
      std::printf("  %zu: dropout %.3f\n", idx, static_cast<double>(l.rate));
      break;
    case LayerKind::flatten:
      std::printf("  %zu: flatten\n", idx);
      break;
  }
}

int cmd_inspect(const std::string& model_path) {
  const QuantizedModel model = load_model(model_path);
  const NetworkSpec& net = model.net;
  std::printf("format: LNN1 v1\n");
  std::printf("variant: %s\n", variant_name(net.variant));
  std::printf("layers: %zu\n", net.layers.size());
  for (size_t i = 0; i < net.layers.size(); ++i) print_layer(i, net.layers[i]);
  if (net.input_shape.empty()) {
    std::printf("input_shape: unresolved\n");
  } else {
    std::printf("input_shape:");
    for (int d : net.input_shape) std::printf(" %d", d);
    std::printf("\n");
  }
  std::printf("num_classes: %d\n", net.num_classes);
  std::printf("storage_bits: %lld\n",
              static_cast<long long>(storage_bits(net, net.variant)));

  const auto spec = variant_codebook(net.variant);
  if (!spec) {
    std::printf("codebook histogram: n/a (float weights)\n");
    return 0;
  }
  std::map<float, int64_t> histogram;
  for (const QuantizedLinear& ql : model.linear)
    for (const WeightCode& code : ql.codes) ++histogram[code.value()];
  std::printf("codebook histogram (%zu distinct values):\n", histogram.size());
  for (const auto& [value, count] : histogram)
    std::printf("  %- 12g %lld\n", static_cast<double>(value),
                static_cast<long long>(count));
  return 0;
}

// ---------------------------------------------------------------------------
// compare
// ---------------------------------------------------------------------------

struct CompareRow {
  std::string variant;
  std::string config;
  double test_error = 0.0;
  double energy = 0.0;
  bool pareto = false;
};

int cmd_compare(const std::string& metrics_dir, const std::string& table_path,
                const std::string& out_path) {
  const CostTable table =
      table_path.empty() ? default_cost_table()
                         : cost_table_from_json(read_text_file(table_path));

  std::vector<fs::path> run_files;
  for (const auto& entry : fs::recursive_directory_iterator(metrics_dir))
    if (entry.is_regular_file() && entry.path().filename() == "run.json")
      run_files.push_back(entry.path());
  std::sort(run_files.begin(), run_files.end());
  if (run_files.empty())
    throw std::runtime_error("no run.json files under " + metrics_dir);

  std::vector<CompareRow> rows;
  for (const fs::path& path : run_files) {
    nlohmann::json j = nlohmann::json::parse(read_text_file(path.string()));
    CompareRow row;
    row.variant = j.at("variant").get<std::string>();
    const std::string preset = j.at("preset").get<std::string>();
    row.config = preset + " seed=" + std::to_string(j.at("seed").get<uint64_t>()) +
                 " epochs=" + std::to_string(j.at("epochs").get<int>());
    row.test_error = j.at("test_error").get<double>();
    const ModelVariant variant = parse_variant(row.variant);
    const NetworkSpec net = make_preset(preset, variant);
    row.energy = estimate(count_ops(net, variant), table).total;
    rows.push_back(std::move(row));
  }

  // brute-force dominance: a row is Pareto-optimal when no other row beats it
  // on both axes
  for (size_t i = 0; i < rows.size(); ++i) {
    bool dominated = false;
    for (size_t j = 0; j < rows.size(); ++j)
      if (j != i && rows[j].test_error < rows[i].test_error &&
          rows[j].energy < rows[i].energy)
        dominated = true;
    rows[i].pareto = !dominated;
  }

  std::string csv = "variant,config,test_error,estimated_energy,pareto\n";
  std::printf("%-14s %-34s %10s %16s %7s\n", "variant", "config", "test_error",
              "energy", "pareto");
  for (const CompareRow& row : rows) {
    std::printf("%-14s %-34s %10.4f %16.1f %7s\n", row.variant.c_str(),
                row.config.c_str(), row.test_error, row.energy,
                row.pareto ? "yes" : "no");
    char line[256];
    std::snprintf(line, sizeof line, "%s,%s,%.6f,%.6f,%s\n", row.variant.c_str(),
                  row.config.c_str(), row.test_error, row.energy,
                  row.pareto ? "yes" : "no");
    csv += line;
  }
  if (!out_path.empty()) {
    write_text_file(out_path, csv);
    std::printf("wrote %s\n", out_path.c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multiplication-free neural networks: train, pack, and profile"};
  app.require_subcommand(1);

  // train
  auto* train = app.add_subcommand("train", "Train a preset and write checkpoints");
  std::string preset = "mnist-1hidden", variant_str = "conventional", out_dir;
  uint64_t seed = 1;
  TrainConfig cfg;
  DataFlags train_data;
  std::string rounding = "stochastic", optimizer = "adam";
  train->add_option("--preset", preset, "Network preset")->required();
  train->add_option("--variant", variant_str, "Model variant")->required();
  train->add_option("--seed", seed, "RNG seed (default 1)");
  train->add_option("--epochs", cfg.epochs, "Training epochs (default 50)");
  train->add_option("--batch", cfg.batch_size, "Minibatch size (default 100)");
  train->add_option("--eta", cfg.eta, "Learning rate (default 1e-3)");
  train->add_option("--eta-decay-epoch", cfg.eta_decay_epoch,
                    "1-based epoch where eta is scaled, 0 disables (default 40)");
  train->add_option("--eta-decay-factor", cfg.eta_decay_factor,
                    "Scale applied at the decay epoch (default 0.1)");
  train->add_option("--rounding", rounding, "stochastic|nearest (default stochastic)");
  train->add_option("--optimizer", optimizer, "adam|sgd (default adam)");
  train->add_option("--val-fraction", cfg.validation_fraction,
                    "Validation share of the training set (default 1/6)");
  train->add_option("--out", out_dir, "Output directory")->required();
  add_data_flags(train, train_data);

  // quantize
  auto* quantize = app.add_subcommand("quantize", "Finalize a checkpoint into a packed model");
  std::string ckpt_path, model_out;
  quantize->add_option("--ckpt", ckpt_path, "Checkpoint file")->required();
  quantize->add_option("--out", model_out, "Packed model path")->required();

  // eval
  auto* eval = app.add_subcommand("eval", "Score a packed model on a dataset");
  std::string eval_model, eval_split = "test";
  int fixed_bits = 0, frac_bits = 0;
  bool quantize_first = false, binary_fast = false, fold_bn = false;
  DataFlags eval_data;
  eval->add_option("--model", eval_model, "Packed model file")->required();
  eval->add_option("--split", eval_split, "test|train|all (default test)");
  eval->add_option("--fixed-bits", fixed_bits, "Fixed-point total bits");
  eval->add_option("--frac-bits", frac_bits, "Fixed-point fractional bits");
  eval->add_flag("--quantize-first", quantize_first,
                 "Quantize conventional float weights before fixed-point eval");
  eval->add_flag("--binary-fast", binary_fast,
                 "XNOR/counter fast path (binarized variants only)");
  eval->add_flag("--fold-bn", fold_bn, "Fold batch-norm into scale/shift first");
  add_data_flags(eval, eval_data);

  // estimate
  auto* est = app.add_subcommand("estimate", "Energy estimate from operation counts");
  std::string est_model, est_table, est_out, est_format = "json";
  est->add_option("--model", est_model, "Packed model file")->required();
  est->add_option("--cost-table", est_table, "Cost table JSON (default built-in)");
  est->add_option("--out", est_out, "Report path (stdout when omitted)");
  est->add_option("--format", est_format, "json|csv (default json)");

  // inspect
  auto* inspect = app.add_subcommand("inspect", "Print a packed model's layout");
  std::string inspect_model;
  inspect->add_option("--model", inspect_model, "Packed model file")->required();

  // compare
  auto* compare = app.add_subcommand("compare", "Cross-run error/energy table");
  std::string cmp_dir, cmp_table, cmp_out;
  compare->add_option("--metrics-dir", cmp_dir, "Directory scanned for run.json files")
      ->required();
  compare->add_option("--cost-table", cmp_table, "Cost table JSON (default built-in)");
  compare->add_option("--out", cmp_out, "Also write the table as CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help / --version
    std::fflush(stdout);
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }

  try {
    if (*train) {
      if (rounding == "stochastic") cfg.rounding = RoundingMode::stochastic;
      else if (rounding == "nearest") cfg.rounding = RoundingMode::nearest;
      else throw std::invalid_argument("unknown rounding '" + rounding + "'");
      if (optimizer == "adam") cfg.optimizer = OptimizerKind::adam;
      else if (optimizer == "sgd") cfg.optimizer = OptimizerKind::sgd;
      else throw std::invalid_argument("unknown optimizer '" + optimizer + "'");
      return cmd_train(preset, variant_str, seed, cfg, train_data, out_dir);
    }
    if (*quantize) return cmd_quantize(ckpt_path, model_out);
    if (*eval)
      return cmd_eval(eval_model, eval_data, eval_split, fixed_bits, frac_bits,
                      quantize_first, binary_fast, fold_bn);
    if (*est) return cmd_estimate(est_model, est_table, est_out, est_format);
    if (*inspect) return cmd_inspect(inspect_model);
    if (*compare) return cmd_compare(cmp_dir, cmp_table, cmp_out);
  } catch (const std::exception& e) {
    std::fflush(stdout);
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
