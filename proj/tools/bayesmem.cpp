// bayesmem: command-line front end for fitting, extending, updating and
// evaluating per-class density memory banks.
//
// Exit codes: 0 success, 1 I/O failure, 2 validation failure.

#include <openssl/evp.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "bayesmem/bayesmem.hpp"

namespace fs = std::filesystem;
using namespace bayesmem;

namespace {

constexpr const char* kVersion = "1.0.0";
constexpr int kExitIo = 1;
constexpr int kExitValidation = 2;

struct Options {
  std::string features, format, bank, out, config;
  std::string estimator = "gmm";
  int components = 2;
  double bandwidth = 0.0;  // 0: Silverman's rule
  std::uint64_t seed = 0;
  unsigned threads = 0;
  bool posteriors = false;
  bool uniform_prior = false;
  // synth
  std::size_t classes = 4, dim = 8, n_train = 50, n_test = 20;
  double separation = 1.0, noise = 0.05, mode_spread = 0.1;
  std::string out_test;
};

ShardFormat resolve_format(const Options& o, const std::string& path) {
  if (o.format.empty()) return format_from_path(path);
  return o.format == "csv" ? ShardFormat::csv : ShardFormat::binary;
}

FeatureDataset load_normalized(const Options& o, const std::string& path) {
  return l2_normalize(load_shard(path, resolve_format(o, path)));
}

std::string sha256_hex(const std::vector<std::uint8_t>& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr);
  std::ostringstream os;
  for (unsigned i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return os.str();
}

void write_text(const std::string& path, const std::string& text) {
  detail::write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string join_ids(const std::set<ClassId>& ids) {
  std::string s;
  for (ClassId id : ids) s += (s.empty() ? "" : ", ") + std::to_string(id);
  return s;
}

int cmd_fit(const Options& o) {
  EstimatorConfig est = o.estimator == "kde" ? EstimatorConfig::kde() : EstimatorConfig::gmm(o.components);
  if (o.bandwidth > 0.0) est.bandwidth = o.bandwidth;
  est.validate();
  const auto ds = load_normalized(o, o.features);
  MemoryBank bank(ds.dim, est);
  for (const auto& [id, records] : split_by_class(ds)) bank.add_class(form_memory(id, records, est, o.seed, o.threads));
  save_bank(bank, o.out);
  std::cerr << "fitted " << bank.size() << " classes (K=" << bank.dim() << ") -> " << o.out << "\n";
  return 0;
}

int cmd_learn(const Options& o) {
  auto bank = load_bank(o.bank);
  const auto ds = load_normalized(o, o.features);
  if (ds.dim != bank.dim())
    throw ValidationError("shard has K=" + std::to_string(ds.dim) + ", bank has K=" + std::to_string(bank.dim()));
  const auto by_class = split_by_class(ds);
  std::set<ClassId> overlap;
  for (const auto& [id, _] : by_class)
    if (bank.contains(id)) overlap.insert(id);
  if (!overlap.empty())
    throw ValidationError("classes already in the bank: " + join_ids(overlap) +
                          "; use `update` to add new data of existing classes");
  for (const auto& [id, records] : by_class)
    bank.add_class(form_memory(id, records, bank.estimator(), o.seed, o.threads));
  save_bank(bank, o.out);
  std::cerr << "learned " << by_class.size() << " new classes; bank now has " << bank.size() << " -> " << o.out
            << "\n";
  return 0;
}

int cmd_update(const Options& o) {
  auto bank = load_bank(o.bank);
  const auto ds = load_normalized(o, o.features);
  if (ds.dim != bank.dim())
    throw ValidationError("shard has K=" + std::to_string(ds.dim) + ", bank has K=" + std::to_string(bank.dim()));
  const auto by_class = split_by_class(ds);
  std::set<ClassId> unknown;
  for (const auto& [id, _] : by_class)
    if (!bank.contains(id)) unknown.insert(id);
  if (!unknown.empty())
    throw ValidationError("classes not in the bank: " + join_ids(unknown) + "; use `learn` to add new classes");
  for (const auto& [id, records] : by_class) bank.update_class(id, records, o.threads);
  save_bank(bank, o.out);
  std::cerr << "updated " << by_class.size() << " classes with " << ds.size() << " samples -> " << o.out << "\n";
  return 0;
}

int cmd_predict(const Options& o) {
  const auto bank = load_bank(o.bank);
  const auto ds = load_normalized(o, o.features);
  if (ds.dim != bank.dim())
    throw ValidationError("shard has K=" + std::to_string(ds.dim) + ", bank has K=" + std::to_string(bank.dim()));
  if (bank.empty()) throw ValidationError("no classes learned");
  const PredictOptions opts{o.uniform_prior ? PriorMode::uniform : PriorMode::count_ratio, o.posteriors};

  std::vector<ClassScores> scores(ds.size());
  detail::parallel_for(ds.size(), o.threads, [&](std::size_t i) { scores[i] = predict(bank, ds.records[i].values, opts); });

  std::string out = "index,label,predicted,log_joint";
  if (o.posteriors)
    for (ClassId id : bank.class_ids()) out += ",posterior_" + std::to_string(id);
  out += "\n";
  std::size_t clamped = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& s = scores[i];
    double best = 0.0;
    for (std::size_t c = 0; c < s.classes.size(); ++c)
      if (s.classes[c] == s.predicted) best = s.log_joint[c];
    out += std::to_string(i) + "," + std::to_string(ds.records[i].label) + "," + std::to_string(s.predicted) + "," +
           detail::format_double(best);
    if (s.posterior)
      for (double p : *s.posterior) out += "," + detail::format_double(p);
    out += "\n";
    if (s.clamped_terms > 0) ++clamped;
  }
  write_text(o.out, out);
  if (clamped > 0)
    std::cerr << "warning: " << clamped << " predictions involved log-densities clamped at " << kLogDensityClamp
              << "\n";
  return 0;
}

int cmd_protocol(const Options& o) {
  json raw;
  {
    const auto bytes = detail::read_file(o.config);
    try {
      raw = json::parse(bytes.begin(), bytes.end());
    } catch (const json::parse_error& e) {
      throw ValidationError(std::string("config is not valid JSON: ") + e.what());
    }
  }
  auto cfg = experiment_from_json(raw);
  if (o.threads != 0) cfg.protocol.threads = o.threads;

  json manifest;
  manifest["tool"] = "bayesmem";
  manifest["version"] = kVersion;
  manifest["bank_format_version"] = kBankFormatVersion;
  manifest["config"] = raw;
  json inputs = json::array();

  FeatureDataset train, test;
  if (cfg.synthetic) {
    const auto& s = *cfg.synthetic;
    const auto spec =
        random_synthetic_spec(s.classes, s.dim, s.components, s.separation, s.noise, s.mode_spread, s.seed);
    auto data = make_synthetic_dataset(spec, s.n_train, s.n_test, s.seed);
    train = std::move(data.train);
    test = std::move(data.test);
    manifest["synthetic_seed"] = s.seed;
  } else {
    for (const auto* path : {&*cfg.train_path, &*cfg.test_path}) {
      const auto bytes = detail::read_file(*path);
      inputs.push_back({{"path", *path}, {"sha256", sha256_hex(bytes)}, {"bytes", bytes.size()}});
    }
    const auto fmt_train = cfg.format.value_or(format_from_path(*cfg.train_path));
    const auto fmt_test = cfg.format.value_or(format_from_path(*cfg.test_path));
    train = l2_normalize(load_shard(*cfg.train_path, fmt_train));
    test = l2_normalize(load_shard(*cfg.test_path, fmt_test));
  }
  manifest["inputs"] = inputs;

  std::vector<EvalReport> runs;
  if (cfg.sweep)
    runs = sweep(train, test, cfg.protocol, *cfg.sweep);
  else
    runs = repeat_runs(train, test, cfg.protocol, cfg.repeats);

  json seeds = json::array();
  for (const auto& r : runs) seeds.push_back(r.config.seed);
  manifest["run_seeds"] = seeds;

  fs::create_directories(o.out);
  json report;
  std::string csv;
  if (runs.size() == 1) {
    report = to_json(runs.front(), cfg.record_timing);
    csv = report_csv(runs.front());
  } else {
    json arr = json::array();
    csv = "run,round,n_classes,mcr\n";
    for (std::size_t i = 0; i < runs.size(); ++i) {
      arr.push_back(to_json(runs[i], cfg.record_timing));
      for (const auto& r : runs[i].rounds)
        csv += std::to_string(i) + "," + std::to_string(r.round) + "," + std::to_string(r.classes.size()) + "," +
               detail::format_double(r.mcr) + "\n";
    }
    if (cfg.sweep) report["sweep"] = {{"axis", to_string(cfg.sweep->axis)}, {"values", cfg.sweep->values}};
    report["runs"] = std::move(arr);
    if (!cfg.sweep) report["summary"] = to_json(summarize(runs));
  }
  write_text((fs::path(o.out) / "report.json").string(), report.dump(2) + "\n");
  write_text((fs::path(o.out) / "report.csv").string(), csv);
  write_text((fs::path(o.out) / "manifest.json").string(), manifest.dump(2) + "\n");

  const auto& last = runs.back().rounds.back();
  std::cerr << runs.size() << " run(s), " << runs.back().rounds.size() << " rounds; final MCR " << last.mcr << " -> "
            << o.out << "\n";
  return 0;
}

int cmd_inspect(const Options& o) {
  const auto bank = load_bank(o.bank);
  const std::string text = bank_to_json(bank).dump(2) + "\n";
  if (o.out.empty())
    std::cout << text;
  else
    write_text(o.out, text);
  return 0;
}

int cmd_synth(const Options& o) {
  const auto spec =
      random_synthetic_spec(o.classes, o.dim, o.components, o.separation, o.noise, o.mode_spread, o.seed);
  const auto data = make_synthetic_dataset(spec, o.n_train, o.n_test, o.seed);
  write_shard(data.train, o.out, resolve_format(o, o.out));
  if (!o.out_test.empty()) write_shard(data.test, o.out_test, resolve_format(o, o.out_test));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continual-learning classifier built from per-class feature densities"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  Options o;

  auto add_threads = [&](CLI::App* cmd) {
    cmd->add_option("--threads", o.threads, "worker threads (0: all cores)")->envname("BAYESMEM_THREADS");
  };
  auto add_format = [&](CLI::App* cmd) {
    cmd->add_option("--format", o.format, "shard format (default: by extension)")
        ->check(CLI::IsMember({"binary", "csv"}));
  };

  auto* fit = app.add_subcommand("fit", "form a memory bank from a labeled feature shard");
  fit->add_option("--features", o.features, "feature shard")->required();
  fit->add_option("--estimator", o.estimator, "density estimator")->check(CLI::IsMember({"gmm", "kde"}));
  fit->add_option("--components", o.components, "GMM components per feature")->check(CLI::PositiveNumber);
  fit->add_option("--bandwidth", o.bandwidth, "fixed KDE bandwidth (default: Silverman's rule)")
      ->check(CLI::PositiveNumber);
  fit->add_option("--seed", o.seed, "seed");
  fit->add_option("--out", o.out, "output bank")->required();
  add_format(fit);
  add_threads(fit);

  auto* learn = app.add_subcommand("learn", "add the shard's new classes to an existing bank");
  learn->add_option("--bank", o.bank, "input bank")->required();
  learn->add_option("--features", o.features, "feature shard with new classes only")->required();
  learn->add_option("--seed", o.seed, "seed");
  learn->add_option("--out", o.out, "output bank")->required();
  add_format(learn);
  add_threads(learn);

  auto* update = app.add_subcommand("update", "absorb new samples of classes already in the bank");
  update->add_option("--bank", o.bank, "input bank")->required();
  update->add_option("--features", o.features, "feature shard with known classes only")->required();
  update->add_option("--out", o.out, "output bank")->required();
  add_format(update);
  add_threads(update);

  auto* pred = app.add_subcommand("predict", "classify every record of a shard");
  pred->add_option("--bank", o.bank, "bank")->required();
  pred->add_option("--features", o.features, "feature shard")->required();
  pred->add_option("--out", o.out, "predictions CSV")->required();
  pred->add_flag("--posteriors", o.posteriors, "append normalized posterior columns");
  pred->add_flag("--uniform-prior", o.uniform_prior, "ignore class counts (ablation)");
  add_format(pred);
  add_threads(pred);

  auto* proto = app.add_subcommand("protocol", "run a continual-learning evaluation from a JSON config");
  proto->add_option("--config", o.config, "experiment config (JSON)")->required();
  proto->add_option("--out", o.out, "output directory")->required();
  add_threads(proto);

  auto* inspect = app.add_subcommand("inspect", "export a bank as JSON");
  inspect->add_option("--bank", o.bank, "bank")->required();
  inspect->add_option("--out", o.out, "output file (default: stdout)");

  auto* synth = app.add_subcommand("synth", "write synthetic train/test shards");
  synth->add_option("--classes", o.classes)->check(CLI::PositiveNumber);
  synth->add_option("--dim", o.dim)->check(CLI::PositiveNumber);
  synth->add_option("--components", o.components)->check(CLI::PositiveNumber);
  synth->add_option("--separation", o.separation);
  synth->add_option("--noise", o.noise)->check(CLI::PositiveNumber);
  synth->add_option("--mode-spread", o.mode_spread);
  synth->add_option("--n-train", o.n_train)->check(CLI::PositiveNumber);
  synth->add_option("--n-test", o.n_test)->check(CLI::PositiveNumber);
  synth->add_option("--seed", o.seed);
  synth->add_option("--out", o.out, "training shard")->required();
  synth->add_option("--out-test", o.out_test, "test shard");
  add_format(synth);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  try {
    if (*fit) return cmd_fit(o);
    if (*learn) return cmd_learn(o);
    if (*update) return cmd_update(o);
    if (*pred) return cmd_predict(o);
    if (*proto) return cmd_protocol(o);
    if (*inspect) return cmd_inspect(o);
    if (*synth) return cmd_synth(o);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitValidation;
}
