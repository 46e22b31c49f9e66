// Copyright 2026 The cvarprobe Authors
// SPDX-License-Identifier: Apache-2.0

#include "cvarprobe/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <array>
#include <charconv>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>

#include "cvarprobe/error.hpp"
#include "cvarprobe/feature_bank.hpp"
#include "cvarprobe/metrics.hpp"
#include "cvarprobe/mlp.hpp"
#include "cvarprobe/trainer.hpp"

namespace cvarprobe {
namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

template <typename T>
std::vector<T> parse_list(const std::string& text, const std::string& flag) {
  std::vector<T> values;
  std::stringstream ss(text);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    T v{};
    const auto* first = cell.data();
    const auto* last = cell.data() + cell.size();
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (cell.empty() || ec != std::errc() || ptr != last) {
      throw UsageError(flag + ": cannot parse '" + cell + "' in '" + text + "'");
    }
    values.push_back(v);
  }
  if (values.empty()) throw UsageError(flag + ": empty list");
  return values;
}

std::string format_value(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(6) << v;
  return os.str();
}

std::string shortest(double v) {
  std::array<char, 32> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

// Flags shared by train and sweep-alpha.
struct TrainFlags {
  std::string bank;
  std::string val_bank;
  std::string task;
  std::optional<unsigned> classes;
  std::optional<unsigned> units;
  double alpha = 0.3;
  double gamma = 0.05;
  double lr = 1e-3;
  double min_lr = 0.0;
  std::size_t batch_size = 32;
  std::size_t epochs = 32;
  std::uint64_t seed = 0;
  std::string hidden = "512,256";
  double dropout = 0.3;
  double val_fraction = 0.0;
};

void add_train_flags(CLI::App& cmd, TrainFlags& f) {
  cmd.add_option("--bank", f.bank, "Training feature bank (FBNK or CSV)")->required();
  cmd.add_option("--val-bank", f.val_bank, "Validation feature bank");
  cmd.add_option("--task", f.task, "Head preset: expr (8 classes) or au (12 units)")
      ->check(CLI::IsMember({"expr", "au"}));
  cmd.add_option("--classes", f.classes, "Override the multiclass head size");
  cmd.add_option("--units", f.units, "Override the multilabel head size");
  cmd.add_option("--alpha", f.alpha, "CVaR tail level in (0,1]")->capture_default_str();
  cmd.add_option("--gamma", f.gamma, "SAM perturbation magnitude (>= 0)")->capture_default_str();
  cmd.add_option("--lr", f.lr, "Base learning rate")->capture_default_str();
  cmd.add_option("--min-lr", f.min_lr, "Cosine schedule floor")->capture_default_str();
  cmd.add_option("--batch-size", f.batch_size, "Minibatch size (>= 2)")->capture_default_str();
  cmd.add_option("--epochs", f.epochs, "Training epochs")->capture_default_str();
  cmd.add_option("--seed", f.seed, "Master seed for init, shuffling and dropout")->capture_default_str();
  cmd.add_option("--hidden", f.hidden, "Hidden widths h1,h2")->capture_default_str();
  cmd.add_option("--dropout", f.dropout, "Dropout rate in [0,1)")->capture_default_str();
  cmd.add_option("--val-fraction", f.val_fraction, "Held-out fraction when --val-bank is absent")
      ->capture_default_str();
}

void check_usage(const TrainFlags& f) {
  if (!(f.alpha > 0.0 && f.alpha <= 1.0)) {
    throw UsageError("--alpha must lie in (0,1], got " + std::to_string(f.alpha));
  }
  if (!(f.gamma >= 0.0)) throw UsageError("--gamma must be >= 0");
  if (!(f.lr > 0.0)) throw UsageError("--lr must be > 0");
  if (!(f.min_lr >= 0.0 && f.min_lr <= f.lr)) throw UsageError("--min-lr must lie in [0, lr]");
  if (f.batch_size < 2) throw UsageError("--batch-size must be >= 2");
  if (f.epochs < 1) throw UsageError("--epochs must be >= 1");
  if (!(f.dropout >= 0.0 && f.dropout < 1.0)) throw UsageError("--dropout must lie in [0,1)");
  if (!(f.val_fraction >= 0.0 && f.val_fraction < 1.0)) throw UsageError("--val-fraction must lie in [0,1)");
  if (f.classes && f.units) throw UsageError("--classes and --units are mutually exclusive");
  if (f.task == "expr" && f.units) throw UsageError("--units does not apply to --task expr");
  if (f.task == "au" && f.classes) throw UsageError("--classes does not apply to --task au");
  if (f.classes && (*f.classes < 2 || *f.classes > 0xFFFF)) throw UsageError("--classes must lie in [2, 65535]");
  if (f.units && (*f.units < 1 || *f.units > 0xFFFF)) throw UsageError("--units must lie in [1, 65535]");
  const auto hidden = parse_list<unsigned>(f.hidden, "--hidden");
  if (hidden.size() != 2 || hidden[0] < 1 || hidden[1] < 1) throw UsageError("--hidden needs two widths >= 1");
}

std::optional<TaskKind> requested_head(const TrainFlags& f) {
  if (f.task == "expr" || (f.task.empty() && f.classes)) {
    return TaskKind::multiclass(static_cast<std::uint16_t>(f.classes.value_or(kExpressionClasses)));
  }
  if (f.task == "au" || (f.task.empty() && f.units)) {
    return TaskKind::multilabel(static_cast<std::uint16_t>(f.units.value_or(kActionUnits)));
  }
  return std::nullopt;
}

std::string describe(const TaskKind& t) {
  return (t.is_multiclass() ? "multiclass k=" : "multilabel m=") + std::to_string(t.width);
}

FeatureBank load_for_head(const std::string& path, const std::optional<TaskKind>& head) {
  FeatureBank bank = load_bank(path, head);
  if (head && *head != bank.task()) {
    throw Error(ErrorCode::kTaskMismatch, path + " is " + describe(bank.task()) + ", head is " + describe(*head));
  }
  return bank;
}

TrainConfig make_config(const TrainFlags& f, const FeatureBank& bank) {
  const auto hidden = parse_list<unsigned>(f.hidden, "--hidden");
  TrainConfig c;
  c.mlp.task = bank.task();
  c.mlp.input_dim = static_cast<std::uint32_t>(bank.dim());
  c.mlp.hidden1 = hidden[0];
  c.mlp.hidden2 = hidden[1];
  c.mlp.dropout = f.dropout;
  c.cvar.alpha = f.alpha;
  c.sam.gamma = f.gamma;
  c.lr = f.lr;
  c.min_lr = f.min_lr;
  c.batch_size = f.batch_size;
  c.epochs = f.epochs;
  c.seeds = TrainSeeds::from_master(f.seed);
  c.val_fraction = f.val_fraction;
  return c;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIoFailure, "cannot open " + path + " for writing");
  out << text;
  out.flush();
  if (!out) throw Error(ErrorCode::kIoFailure, "write failed for " + path);
}

int cmd_train(const TrainFlags& f, const std::string& out_path, const std::string& log_path, std::ostream& out) {
  check_usage(f);
  const auto head = requested_head(f);
  const FeatureBank bank = load_for_head(f.bank, head);
  std::optional<FeatureBank> val;
  if (!f.val_bank.empty()) val = load_for_head(f.val_bank, bank.task());
  const TrainConfig config = make_config(f, bank);
  const TrainResult result = train(bank, config, val ? &*val : nullptr);
  save_checkpoint(result.best, out_path);
  if (!log_path.empty()) {
    std::ostringstream log;
    write_log_csv(result.log, log);
    write_text(log_path, log.str());
  }
  out << "macro_f1=" << format_value(result.best_val_macro_f1) << '\n';
  return kExitOk;
}

int cmd_eval(const std::string& model_path, const std::string& bank_path, const std::string& report_path,
             std::size_t batch_size, std::ostream& out) {
  if (batch_size < 1) throw UsageError("--batch-size must be >= 1");
  const MlpParams params = load_checkpoint(model_path);
  const FeatureBank bank = load_for_head(bank_path, params.config.task);
  const EvalReport report = evaluate(params, bank, batch_size);
  std::ostringstream csv;
  write_report_csv(report, csv);
  write_text(report_path, csv.str());
  out << "macro_f1=" << format_value(report.macro_f1) << '\n';
  return kExitOk;
}

int cmd_sweep_alpha(TrainFlags f, const std::string& alphas_text, const std::string& out_path, std::ostream& out,
                    std::ostream& err) {
  auto alphas = parse_list<double>(alphas_text, "--alphas");
  for (const double a : alphas) {
    if (!(a > 0.0 && a <= 1.0)) throw UsageError("--alphas: every alpha must lie in (0,1], got " + std::to_string(a));
  }
  std::sort(alphas.begin(), alphas.end());
  const auto before = alphas.size();
  std::string dropped;
  for (std::size_t i = 1; i < alphas.size(); ++i) {
    if (alphas[i] == alphas[i - 1]) dropped += (dropped.empty() ? "" : ",") + shortest(alphas[i]);
  }
  alphas.erase(std::unique(alphas.begin(), alphas.end()), alphas.end());
  if (alphas.size() != before) {
    err << "warning: dropped duplicate alpha value(s) " << dropped << "\n";
  }
  check_usage(f);
  if (f.val_bank.empty()) throw UsageError("sweep-alpha requires --val-bank");

  const auto head = requested_head(f);
  const FeatureBank bank = load_for_head(f.bank, head);
  const FeatureBank val = load_for_head(f.val_bank, bank.task());

  std::vector<std::pair<double, double>> rows;
  for (const double a : alphas) {
    f.alpha = a;
    const TrainResult result = train(bank, make_config(f, bank), &val);
    rows.emplace_back(a, result.best_val_macro_f1);
  }

  std::ostringstream csv;
  csv << "alpha,val_macro_f1\n" << std::setprecision(17);
  for (const auto& [a, score] : rows) csv << shortest(a) << ',' << score << '\n';
  write_text(out_path, csv.str());

  auto ranked = rows;
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& x, const auto& y) { return x.second > y.second; });
  for (std::size_t r = 0; r < ranked.size(); ++r) {
    out << "rank " << (r + 1) << ": alpha=" << shortest(ranked[r].first) << " val_macro_f1=" << format_value(ranked[r].second)
        << '\n';
  }
  return kExitOk;
}

struct SynthFlags {
  std::string task = "expr";
  std::optional<unsigned> classes;
  std::optional<unsigned> units;
  std::size_t dims = kDefaultFeatureDim;
  std::string counts;
  std::string rates;
  std::size_t samples = 0;
  double separation = 1.0;
  double noise = 1.0;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_gen_synthetic(const SynthFlags& f, std::ostream& out) {
  SyntheticSpec spec;
  spec.dim = f.dims;
  spec.separation = f.separation;
  spec.noise = f.noise;
  spec.seed = f.seed;
  if (f.task == "expr") {
    if (f.counts.empty()) throw UsageError("--counts is required for --task expr");
    for (const auto c : parse_list<std::size_t>(f.counts, "--counts")) spec.class_counts.push_back(c);
    if (f.classes && *f.classes != spec.class_counts.size()) {
      throw UsageError("--classes " + std::to_string(*f.classes) + " disagrees with " +
                       std::to_string(spec.class_counts.size()) + " counts");
    }
    if (spec.class_counts.size() < 2 || spec.class_counts.size() > 0xFFFF) {
      throw UsageError("--counts needs between 2 and 65535 entries");
    }
    spec.task = TaskKind{TaskType::kMulticlass, static_cast<std::uint16_t>(spec.class_counts.size())};
  } else {
    if (f.rates.empty()) throw UsageError("--rates is required for --task au");
    spec.unit_rates = parse_list<double>(f.rates, "--rates");
    if (f.units && *f.units != spec.unit_rates.size()) {
      throw UsageError("--units " + std::to_string(*f.units) + " disagrees with " +
                       std::to_string(spec.unit_rates.size()) + " rates");
    }
    if (spec.unit_rates.size() > 0xFFFF) throw UsageError("--rates has too many entries");
    spec.task = TaskKind{TaskType::kMultilabel, static_cast<std::uint16_t>(spec.unit_rates.size())};
    spec.samples = f.samples;
  }
  try {
    validate_synthetic_spec(spec);
  } catch (const Error& e) {
    throw UsageError(e.detail());
  }
  const FeatureBank bank = gen_synthetic(spec);
  if (f.out.size() >= 4 && f.out.compare(f.out.size() - 4, 4, ".csv") == 0) {
    save_bank_csv(bank, f.out);
  } else {
    save_bank(bank, f.out);
  }
  out << "wrote " << f.out << ": " << describe(bank.task()) << " n=" << bank.size() << " d=" << bank.dim() << '\n';
  return kExitOk;
}

int cmd_inspect(const std::string& bank_path, const std::string& model_path, std::ostream& out) {
  if (bank_path.empty() == model_path.empty()) throw UsageError("inspect needs exactly one of --bank or --model");
  if (!model_path.empty()) {
    const MlpConfig c = read_checkpoint_header(model_path);
    out << "MLPC v" << kCheckpointFormatVersion << ' ' << describe(c.task) << " d=" << c.input_dim
        << " h1=" << c.hidden1 << " h2=" << c.hidden2 << " out=" << c.output_dim() << " dropout=" << c.dropout
        << " bn_epsilon=" << c.bn_epsilon << " bn_momentum=" << c.bn_momentum << '\n';
    return kExitOk;
  }
  std::ifstream probe(bank_path, std::ios::binary);
  char magic[4] = {};
  probe.read(magic, 4);
  if (probe.gcount() == 4 && std::string_view(magic, 4) == "FBNK") {
    const BankHeader h = read_bank_header(bank_path);
    out << "FBNK v" << h.version << ' ' << describe(h.task) << " n=" << h.n << " d=" << h.dim << '\n';
    return kExitOk;
  }
  const FeatureBank bank = load_bank_csv(bank_path);
  out << "CSV " << describe(bank.task()) << " n=" << bank.size() << " d=" << bank.dim() << '\n';
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Tail-risk (CVaR) training of MLP heads over frozen embedding banks"};
  app.require_subcommand(1);

  TrainFlags train_flags;
  std::string train_out;
  std::string train_log;
  auto* train_cmd = app.add_subcommand("train", "Train a head and write its best-epoch checkpoint");
  add_train_flags(*train_cmd, train_flags);
  train_cmd->add_option("--out", train_out, "Checkpoint path (MLPC)")->required();
  train_cmd->add_option("--log", train_log, "Training log CSV path");

  std::string eval_model, eval_bank, eval_report;
  std::size_t eval_batch = 256;
  auto* eval_cmd = app.add_subcommand("eval", "Score a checkpoint on a bank");
  eval_cmd->add_option("--model", eval_model, "Checkpoint path")->required();
  eval_cmd->add_option("--bank", eval_bank, "Evaluation bank")->required();
  eval_cmd->add_option("--report", eval_report, "Per-class CSV report path")->required();
  eval_cmd->add_option("--batch-size", eval_batch, "Evaluation chunk size")->capture_default_str();

  TrainFlags sweep_flags;
  std::string sweep_alphas = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9";
  std::string sweep_out;
  auto* sweep_cmd = app.add_subcommand("sweep-alpha", "Train one head per alpha and tabulate validation macro F1");
  add_train_flags(*sweep_cmd, sweep_flags);
  sweep_cmd->add_option("--alphas", sweep_alphas, "Comma-separated alpha values")->capture_default_str();
  sweep_cmd->add_option("--out", sweep_out, "Output CSV path (alpha,val_macro_f1)")->required();

  SynthFlags synth;
  auto* synth_cmd = app.add_subcommand("gen-synthetic", "Write a synthetic Gaussian feature bank");
  synth_cmd->add_option("--task", synth.task, "expr (multiclass) or au (multilabel)")
      ->check(CLI::IsMember({"expr", "au"}))
      ->capture_default_str();
  synth_cmd->add_option("--classes", synth.classes, "Class count (must match --counts)");
  synth_cmd->add_option("--units", synth.units, "Unit count (must match --rates)");
  synth_cmd->add_option("--dims", synth.dims, "Feature dimension")->capture_default_str();
  synth_cmd->add_option("--counts", synth.counts, "Per-class sample counts, e.g. 950,50");
  synth_cmd->add_option("--rates", synth.rates, "Per-unit positive rates in (0,1)");
  synth_cmd->add_option("--samples", synth.samples, "Sample count for multilabel banks");
  synth_cmd->add_option("--separation", synth.separation, "Mean separation scale (> 0)")->capture_default_str();
  synth_cmd->add_option("--noise", synth.noise, "Noise standard deviation (> 0)")->capture_default_str();
  synth_cmd->add_option("--seed", synth.seed, "Generator seed")->capture_default_str();
  synth_cmd->add_option("--out", synth.out, "Output path (.csv writes CSV, otherwise FBNK)")->required();

  std::string inspect_bank, inspect_model;
  auto* inspect_cmd = app.add_subcommand("inspect", "Print header metadata of a bank or checkpoint");
  inspect_cmd->add_option("--bank", inspect_bank, "Feature bank path");
  inspect_cmd->add_option("--model", inspect_model, "Checkpoint path");

  std::vector<const char*> argv;
  argv.push_back("cvarprobe");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
      return kExitOk;
    }
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(train_flags, train_out, train_log, out);
    if (eval_cmd->parsed()) return cmd_eval(eval_model, eval_bank, eval_report, eval_batch, out);
    if (sweep_cmd->parsed()) return cmd_sweep_alpha(sweep_flags, sweep_alphas, sweep_out, out, err);
    if (synth_cmd->parsed()) return cmd_gen_synthetic(synth, out);
    if (inspect_cmd->parsed()) return cmd_inspect(inspect_bank, inspect_model, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    err << error_name(e.code()) << ": " << e.detail() << '\n';
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace cvarprobe
