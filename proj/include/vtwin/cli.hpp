#pragma once

// Command-line pipeline: corpus generation, graphs, reference hemodynamics,
// pretraining, fine-tuning, evaluation, validation and PLY export.
//
// Every command takes a plain options struct so it can be driven from code;
// `run` binds those structs to CLI11 options and a TOML-style config file.
// Seeds: every random stream is derive_seed(global_seed, stream, index).

#include <atomic>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "vtwin/a3m.hpp"
#include "vtwin/hemo1d.hpp"
#include "vtwin/metrics.hpp"
#include "vtwin/nnet/train.hpp"
#include "vtwin/physloss.hpp"
#include "vtwin/twin_io.hpp"
#include "vtwin/vgraph.hpp"

namespace vtwin::cli {

namespace fs = std::filesystem;
using hemo::HemoConstants;
using nnet::Index;

enum ExitCode : int { kOk = 0, kFailed = 1, kUsage = 2 };

/// Bad arguments or missing inputs detected before any work starts.
class UsageError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Plumbing

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Sub-seed for item `index` of the named random stream.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream, std::uint64_t index = 0) {
  std::uint64_t tag = 0xcbf29ce484222325ULL;  // FNV-1a of the stream name
  for (unsigned char ch : stream) tag = (tag ^ ch) * 0x100000001b3ULL;
  return splitmix64(splitmix64(seed ^ tag) + index);
}

/// Runs f(i) for i in [0, n) on up to `jobs` threads. The exception of the
/// lowest failing index is rethrown after all workers finish.
template <class F>
void parallel_for(std::size_t n, std::size_t jobs, F&& f) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < jobs; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          f(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

/// Files named directly plus the *.json files of named directories (sorted).
inline std::vector<std::string> expand_inputs(const std::vector<std::string>& paths) {
  std::vector<std::string> out;
  for (const auto& p : paths) {
    if (fs::is_directory(p)) {
      std::vector<std::string> found;
      for (const auto& e : fs::directory_iterator(p)) {
        if (e.is_regular_file() && e.path().extension() == ".json") found.push_back(e.path().string());
      }
      std::sort(found.begin(), found.end());
      out.insert(out.end(), found.begin(), found.end());
    } else {
      out.push_back(p);
    }
  }
  return out;
}

inline void ensure_dir(const std::string& dir) {
  if (dir.empty()) throw UsageError("an output directory is required (--out)");
  fs::create_directories(dir);
}

inline std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  return out;
}

inline std::vector<DigitalTwin> read_twins(const std::vector<std::string>& files, std::size_t jobs) {
  std::vector<DigitalTwin> twins(files.size());
  parallel_for(files.size(), jobs, [&](std::size_t i) {
    try {
      twins[i] = io::read_twin(files[i]);
    } catch (const Error& e) {
      const std::string msg = e.what();
      throw Error(msg.find(files[i]) == std::string::npos ? files[i] + ": " + msg : msg);
    }
  });
  return twins;
}

/// Minimal CSV reader: header row plus comma-separated fields, no quoting.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name, const std::string& source) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw Error(source + ": missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> f;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) f.push_back(cell);
  if (!line.empty() && line.back() == ',') f.emplace_back();
  return f;
}

inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw Error(path + ": empty CSV file");
  t.header = split_csv_line(line);
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    t.rows.push_back(split_csv_line(line));
    if (t.rows.back().size() != t.header.size()) throw Error(path + ": row with wrong field count: " + line);
  }
  return t;
}

inline double parse_double(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw Error(what + ": not a number: '" + s + "'");
  }
}

/// id -> 0/1 label from a CSV with `id` and `label` columns.
inline std::map<std::string, int> read_labels(const std::string& path) {
  const auto t = read_csv(path);
  const auto ci = t.column("id", path), cl = t.column("label", path);
  std::map<std::string, int> out;
  for (const auto& r : t.rows) {
    if (r[cl] != "0" && r[cl] != "1") throw Error(path + ": label must be 0 or 1 for id " + r[ci]);
    out[r[ci]] = r[cl] == "1";
  }
  return out;
}

struct Prediction {
  std::string id;
  int label = 0;
  double probability = 0.0;
};

inline void write_predictions(const fs::path& path, const std::vector<Prediction>& preds) {
  auto out = open_out(path);
  out << "id,label,probability\n" << std::setprecision(17);
  for (const auto& p : preds) out << p.id << ',' << p.label << ',' << p.probability << '\n';
}

inline std::vector<Prediction> read_predictions(const std::string& path) {
  const auto t = read_csv(path);
  const auto ci = t.column("id", path), cl = t.column("label", path), cp = t.column("probability", path);
  std::vector<Prediction> out;
  for (const auto& r : t.rows) {
    if (r[cl] != "0" && r[cl] != "1") throw Error(path + ": label must be 0 or 1");
    out.push_back({r[ci], r[cl] == "1", parse_double(r[cp], path)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Options

struct Globals {
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
};

struct PhantomOptions {
  std::size_t count = 10;
  std::string out;
  a3m::PhantomParams params;
};

struct SynthOptions {
  std::vector<std::string> donors;
  std::size_t count = 0;
  std::string out;
  std::size_t target_n = 100;
  std::size_t target_k = 64;
  a3m::AugmentRanges ranges;
  bool absolute_radius_noise = false;
  /// Random stream name; separate corpora from one seed use different streams.
  std::string stream = "synth";
};

struct GraphOptions {
  std::vector<std::string> inputs;
  std::string out;
  std::string format = "binary";
};

struct HemoOptions {
  std::vector<std::string> inputs;
  std::string out;
  double flow = 3.0;           // cm^3/s
  double inlet_mmhg = 100.0;
  double ffr_threshold = 0.8;  // label = min FFR <= threshold
  HemoConstants constants;
};

struct PretrainOptions {
  std::vector<std::string> inputs;
  std::string out = "checkpoint.json";
  std::string log;
  std::string init;
  nnet::EncoderConfig encoder;
  physloss::LossConfig loss;
  nnet::OptimConfig optim;
};

struct FinetuneOptions {
  std::string checkpoint;
  std::vector<std::string> inputs;
  std::string labels;
  std::string out = "finetuned.json";
  std::string predictions;
  nnet::FinetuneConfig finetune;
};

struct EvalOptions {
  std::vector<std::string> predictions;
  std::string checkpoint;
  std::vector<std::string> inputs;
  std::string labels;
  std::string out;
  double threshold = 0.5;
};

struct ValidateOptions {
  std::vector<std::string> paths;
};

struct ExportOptions {
  std::string input;
  std::string out;
  std::string scalar = "radius";
  double flow = 3.0;
  double inlet_mmhg = 100.0;
  HemoConstants constants;
};

struct PipelineOptions {
  std::string out;
  std::size_t donors = 10;
  std::size_t corpus = 200;
  std::size_t labeled = 40;
  std::size_t folds = 5;
};

// ---------------------------------------------------------------------------
// Commands

/// Procedural donor twins (stand-ins for reconstructed vessels).
inline int cmd_phantom(const PhantomOptions& o, const Globals& g, std::ostream& log) {
  ensure_dir(o.out);
  std::vector<std::string> lines(o.count);
  parallel_for(o.count, g.jobs, [&](std::size_t i) {
    const auto t = a3m::make_phantom(derive_seed(g.seed, "phantom", i), o.params);
    const auto file = t.meta.id + ".json";
    io::write_twin((fs::path(o.out) / file).string(), t);
    lines[i] = nlohmann::json{{"index", i}, {"id", t.meta.id}, {"file", file}, {"seed", *t.meta.seed}}.dump();
  });
  auto manifest = open_out(fs::path(o.out) / "manifest.jsonl");
  for (const auto& l : lines) manifest << l << '\n';
  log << "phantom: wrote " << o.count << " twins to " << o.out << '\n';
  return kOk;
}

/// A3M corpus: each twin pairs a centerline donor with a radius donor.
inline int cmd_synth(const SynthOptions& o, const Globals& g, std::ostream& log) {
  const auto files = expand_inputs(o.donors);
  if (files.empty()) throw UsageError("synth: at least one donor twin is required (--donors)");
  ensure_dir(o.out);
  const auto donors = read_twins(files, g.jobs);
  std::vector<std::string> lines(o.count);
  parallel_for(o.count, g.jobs, [&](std::size_t i) {
    const std::uint64_t s = derive_seed(g.seed, o.stream, i);
    auto p = a3m::sample_params(o.ranges, s, o.target_n, o.target_k);
    p.absolute_radius_noise = o.absolute_radius_noise;
    std::mt19937_64 pick(s);
    const std::size_t a = std::uniform_int_distribution<std::size_t>(0, donors.size() - 1)(pick);
    std::size_t b = a;
    if (donors.size() > 1) {
      b = std::uniform_int_distribution<std::size_t>(0, donors.size() - 2)(pick);
      if (b >= a) ++b;
    }
    const auto t = a3m::synthesize(donors[a], donors[b], p);
    const auto file = t.meta.id + ".json";
    io::write_twin((fs::path(o.out) / file).string(), t);
    lines[i] = nlohmann::json{{"index", i},
                              {"id", t.meta.id},
                              {"file", file},
                              {"donors", {files[a], files[b]}},
                              {"source_ids", t.meta.source_ids},
                              {"params", p},
                              {"seed", s}}
                   .dump();
  });
  auto manifest = open_out(fs::path(o.out) / "manifest.jsonl");
  for (const auto& l : lines) manifest << l << '\n';
  log << "synth: wrote " << o.count << " twins to " << o.out << '\n';
  return kOk;
}

inline int cmd_graph(const GraphOptions& o, const Globals& g, std::ostream& log) {
  if (o.format != "binary" && o.format != "json") throw UsageError("graph: --format must be binary or json");
  const auto files = expand_inputs(o.inputs);
  if (files.empty()) throw UsageError("graph: no input twins");
  ensure_dir(o.out);
  parallel_for(files.size(), g.jobs, [&](std::size_t i) {
    const auto t = io::read_twin(files[i]);
    const auto gr = vgraph::build_graph(t);
    const auto stem = fs::path(files[i]).stem().string();
    if (o.format == "json") {
      open_out(fs::path(o.out) / (stem + ".graph.json")) << vgraph::graph_to_json(gr).dump() << '\n';
    } else {
      auto out = open_out(fs::path(o.out) / (stem + ".graph.bin"));
      vgraph::write_graph_binary(out, gr);
    }
  });
  log << "graph: wrote " << files.size() << " graphs to " << o.out << '\n';
  return kOk;
}

/// Twin at uniform spacing (hemodynamics needs a uniform grid).
inline DigitalTwin uniform_twin(const DigitalTwin& t) {
  return t.centerline.spacing_deviation() <= hemo::kUniformSpacingTol ? t : resample_twin(t, t.size());
}

struct HemoSummary {
  std::string id;
  std::size_t n = 0;
  double drop_mmhg = 0.0;
  double min_ffr = 1.0;
  std::size_t lesions = 0;
  int label = 0;
  std::string status = "ok";
};

inline HemoSummary hemo_profile_csv(const DigitalTwin& twin, const HemoOptions& o, std::ostream* csv) {
  const auto t = uniform_twin(twin);
  const auto geom = hemo::physical_geometry(t);
  const auto seg = hemo::derive_segments(t);
  HemoSummary s;
  s.id = t.meta.id;
  s.n = t.size();
  s.lesions = hemo::lesion_count(seg);
  const auto h = hemo::pressure_profile(geom, seg, o.flow, o.inlet_mmhg * hemo::kDynePerMmHg, o.constants);
  s.drop_mmhg = (h.p.front() - h.p.back()) / hemo::kDynePerMmHg;
  s.min_ffr = *std::min_element(h.ffr.begin(), h.ffr.end());
  s.label = s.min_ffr <= o.ffr_threshold;
  if (csv) {
    std::vector<const char*> kind(t.size());
    for (const auto& sg : seg) {
      for (std::size_t i = sg.start; i < sg.end; ++i) kind[i] = hemo::to_string(sg.kind);
    }
    *csv << "index,s_cm,area_cm2,q_cm3_s,p_mmhg,p_dyne_cm2,ffr,segment\n" << std::setprecision(10);
    for (std::size_t i = 0; i < t.size(); ++i) {
      *csv << i << ',' << geom.dx * double(i) << ',' << geom.area[i] << ',' << h.q[i] << ','
           << h.p[i] / hemo::kDynePerMmHg << ',' << h.p[i] << ',' << h.ffr[i] << ',' << kind[i] << '\n';
    }
  }
  return s;
}

inline void write_hemo_summary(const fs::path& path, const std::vector<HemoSummary>& rows) {
  auto out = open_out(path);
  out << "id,n,delta_p_mmhg,min_ffr,lesion_count,label,status\n" << std::setprecision(10);
  for (const auto& r : rows) {
    out << r.id << ',' << r.n << ',';
    if (r.status == "ok") {
      out << r.drop_mmhg << ',' << r.min_ffr << ',' << r.lesions << ',' << r.label;
    } else {
      out << ",," << r.lesions << ',';
    }
    out << ',' << r.status << '\n';
  }
}

/// Per-twin profile CSVs and summary.csv; non-physiological twins are
/// flagged and the run continues (exit 1 at the end).
inline int cmd_hemo(const HemoOptions& o, const Globals& g, std::ostream& log) {
  o.constants.validate();
  if (!(o.flow >= 0.0) || !(o.inlet_mmhg > 0.0)) throw UsageError("hemo: need flow >= 0 and inlet pressure > 0");
  const auto files = expand_inputs(o.inputs);
  if (files.empty()) throw UsageError("hemo: no input twins");
  ensure_dir(o.out);
  std::vector<HemoSummary> rows(files.size());
  parallel_for(files.size(), g.jobs, [&](std::size_t i) {
    const auto t = io::read_twin(files[i]);
    std::ostringstream csv;
    try {
      rows[i] = hemo_profile_csv(t, o, &csv);
      open_out(fs::path(o.out) / (t.meta.id + ".csv")) << csv.str();
    } catch (const NonPhysiologicalError&) {
      rows[i].id = t.meta.id;
      rows[i].n = t.size();
      rows[i].lesions = hemo::lesion_count(hemo::derive_segments(t));
      rows[i].status = "non_physiological";
    }
  });
  write_hemo_summary(fs::path(o.out) / "summary.csv", rows);
  std::size_t bad = 0;
  for (const auto& r : rows) {
    if (r.status != "ok") {
      ++bad;
      log << "hemo: " << r.id << ": non-physiological (pressure below zero)\n";
    }
  }
  log << "hemo: " << files.size() - bad << " profiles written to " << o.out << '\n';
  return bad ? kFailed : kOk;
}

inline std::vector<nnet::Sample> load_samples(const std::vector<std::string>& inputs, const nnet::EncoderConfig& cfg,
                                              std::size_t jobs) {
  const auto files = expand_inputs(inputs);
  if (files.empty()) throw UsageError("no input twins");
  const auto twins = read_twins(files, jobs);
  std::vector<nnet::Sample> s(twins.size());
  parallel_for(twins.size(), jobs, [&](std::size_t i) { s[i] = nnet::prepare_sample(twins[i], cfg); });
  return s;
}

inline int cmd_pretrain(PretrainOptions o, const Globals& g, std::ostream& log) {
  o.loss.validate(o.encoder.n_centerline);
  o.encoder.seed = derive_seed(g.seed, "init");
  o.optim.seed = derive_seed(g.seed, "epoch");
  nnet::EncoderParams prm;
  if (!o.init.empty()) {
    const auto ck = nnet::load_checkpoint(o.init);
    nnet::check_compatible(ck.config, o.encoder);
    prm = ck.params;
  } else {
    prm = nnet::init_params(o.encoder);
  }
  const auto samples = load_samples(o.inputs, o.encoder, g.jobs);
  std::ofstream log_file;
  if (!o.log.empty()) log_file = open_out(o.log);
  const auto before = nnet::mean_loss(samples, prm, o.encoder, o.loss);
  const auto steps = nnet::pretrain(prm, samples, o.encoder, o.loss, o.optim, [&](const nnet::TrainStep& s) {
    if (log_file.is_open()) nnet::write_log_line(log_file, s);
  });
  const auto after = nnet::mean_loss(samples, prm, o.encoder, o.loss);
  nnet::save_checkpoint(o.out, o.encoder, prm);
  log << "pretrain: " << samples.size() << " twins, " << steps.size() << " steps, total loss " << before.total
      << " -> " << after.total << ", checkpoint " << o.out << '\n';
  return kOk;
}

/// Samples with labels, in input order; every sample needs a label.
inline std::vector<int> labels_for(const std::vector<nnet::Sample>& samples, const std::map<std::string, int>& labels,
                                   const std::string& source) {
  std::vector<int> out;
  for (const auto& s : samples) {
    const auto it = labels.find(s.id);
    if (it == labels.end()) throw Error(source + ": no label for twin '" + s.id + "'");
    out.push_back(it->second);
  }
  return out;
}

inline int cmd_finetune(FinetuneOptions o, const Globals& g, std::ostream& log) {
  if (o.checkpoint.empty() || o.labels.empty()) throw UsageError("finetune: --checkpoint and --labels are required");
  auto ck = nnet::load_checkpoint(o.checkpoint);
  const auto samples = load_samples(o.inputs, ck.config, g.jobs);
  const auto labels = labels_for(samples, read_labels(o.labels), o.labels);
  o.finetune.seed = derive_seed(g.seed, "finetune");
  const auto emb = nnet::embeddings(samples, ck.params, ck.config);
  const auto r = nnet::finetune(ck.params, emb, labels, ck.config, o.finetune);
  nnet::save_checkpoint(o.out, ck.config, ck.params);
  if (!o.predictions.empty()) {
    std::vector<Prediction> p;
    for (std::size_t i = 0; i < samples.size(); ++i) p.push_back({samples[i].id, labels[i], r.probabilities[Index(i)]});
    write_predictions(o.predictions, p);
  }
  log << "finetune: " << samples.size() << " twins, training accuracy " << r.accuracy << ", loss " << r.loss
      << ", checkpoint " << o.out << '\n';
  return kOk;
}

struct FoldMetrics {
  std::size_t n = 0;
  double prevalence = 0, auroc = 0, auprc = 0, f1 = 0, accuracy = 0;
};

inline FoldMetrics fold_metrics(const metrics::EvalSet& e, double threshold) {
  const auto c = metrics::confusion_metrics(e, threshold);
  return {e.size(), e.prevalence(), metrics::auroc(e), metrics::auprc(e), c.f1, c.accuracy};
}

inline metrics::EvalSet to_eval_set(const std::vector<Prediction>& p) {
  metrics::EvalSet e;
  for (const auto& x : p) {
    e.scores.push_back(x.probability);
    e.labels.push_back(x.label);
  }
  return e;
}

/// Metric tables for one or more prediction sets (folds); with several folds
/// the table ends with mean and (population) std rows.
inline int cmd_eval(const EvalOptions& o, const Globals& g, std::ostream& log) {
  ensure_dir(o.out);
  std::vector<std::vector<Prediction>> folds;
  for (const auto& f : o.predictions) folds.push_back(read_predictions(f));
  if (!o.checkpoint.empty()) {
    if (o.labels.empty()) throw UsageError("eval: --labels is required with --checkpoint");
    const auto ck = nnet::load_checkpoint(o.checkpoint);
    const auto samples = load_samples(o.inputs, ck.config, g.jobs);
    const auto labels = labels_for(samples, read_labels(o.labels), o.labels);
    const auto prob = nnet::classify(nnet::embeddings(samples, ck.params, ck.config), ck.params);
    std::vector<Prediction> p;
    for (std::size_t i = 0; i < samples.size(); ++i) p.push_back({samples[i].id, labels[i], prob[Index(i)]});
    write_predictions(fs::path(o.out) / "predictions.csv", p);
    folds.push_back(std::move(p));
  }
  if (folds.empty()) throw UsageError("eval: give --predictions files or --checkpoint with --inputs and --labels");

  std::vector<FoldMetrics> rows;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    const auto e = to_eval_set(folds[f]);
    rows.push_back(fold_metrics(e, o.threshold));
    const std::string suffix = folds.size() == 1 ? "" : "_" + std::to_string(f);
    auto roc = open_out(fs::path(o.out) / ("roc" + suffix + ".csv"));
    roc << std::setprecision(10);
    metrics::write_roc_csv(roc, e);
    auto pr = open_out(fs::path(o.out) / ("pr" + suffix + ".csv"));
    pr << std::setprecision(10);
    metrics::write_pr_csv(pr, e);
    auto dc = open_out(fs::path(o.out) / ("decision_curve" + suffix + ".csv"));
    dc << std::setprecision(10);
    metrics::write_decision_curve_csv(dc, e);
  }
  auto out = open_out(fs::path(o.out) / "metrics.csv");
  out << "fold,n,prevalence,auroc,auprc,f1,accuracy\n" << std::setprecision(10);
  auto row = [&](const std::string& name, const FoldMetrics& m) {
    out << name << ',' << m.n << ',' << m.prevalence << ',' << m.auroc << ',' << m.auprc << ',' << m.f1 << ','
        << m.accuracy << '\n';
  };
  for (std::size_t f = 0; f < rows.size(); ++f) row(std::to_string(f), rows[f]);
  if (rows.size() > 1) {
    FoldMetrics mean, sd;
    const double k = double(rows.size());
    auto fields = [](FoldMetrics& m) { return std::array<double*, 5>{&m.prevalence, &m.auroc, &m.auprc, &m.f1, &m.accuracy}; };
    for (auto r : rows) {
      const auto src = fields(r);
      const auto dst = fields(mean);
      for (std::size_t i = 0; i < 5; ++i) *dst[i] += *src[i] / k;
      mean.n += r.n;
    }
    for (auto r : rows) {
      const auto src = fields(r), mu = fields(mean), dst = fields(sd);
      for (std::size_t i = 0; i < 5; ++i) *dst[i] += (*src[i] - *mu[i]) * (*src[i] - *mu[i]) / k;
    }
    for (auto* v : fields(sd)) *v = std::sqrt(*v);
    sd.n = mean.n;
    row("mean", mean);
    row("std", sd);
    log << "eval: " << rows.size() << " folds, AUROC " << mean.auroc << " +- " << sd.auroc << ", AUPRC " << mean.auprc
        << " +- " << sd.auprc << '\n';
  } else {
    log << "eval: AUROC " << rows[0].auroc << ", AUPRC " << rows[0].auprc << ", F1 " << rows[0].f1 << ", accuracy "
        << rows[0].accuracy << '\n';
  }
  return kOk;
}

/// First violation of a twin file, or nullopt when every geometry and graph
/// invariant holds.
inline std::optional<std::string> validate_file(const std::string& path) {
  try {
    const auto ext = fs::path(path).extension().string();
    if (ext == ".bin") {
      std::ifstream in(path, std::ios::binary);
      if (!in) return "io: cannot open file";
      const auto v = vgraph::graph_violations(vgraph::read_graph_binary(in));
      if (!v.empty()) return v.front().invariant + ": " + v.front().detail;
      return std::nullopt;
    }
    std::ifstream in(path, std::ios::binary);
    if (!in) return "io: cannot open file";
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      return std::string("parse: ") + e.what();
    }
    if (j.is_object() && j.contains("edges") && !j.contains("radii")) {
      const auto v = vgraph::graph_violations(vgraph::graph_from_json(j));
      if (!v.empty()) return v.front().invariant + ": " + v.front().detail;
      return std::nullopt;
    }
    const auto t = io::twin_from_json(j);
    if (const auto v = twin_violations(t); !v.empty()) return v.front().invariant + ": " + v.front().detail;
    const auto v = vgraph::graph_violations(vgraph::build_graph(t));
    if (!v.empty()) return v.front().invariant + ": " + v.front().detail;
    return std::nullopt;
  } catch (const InvariantError& e) {
    return std::string(e.what());
  } catch (const nlohmann::json::exception& e) {
    return std::string("schema: ") + e.what();
  } catch (const std::exception& e) {
    return std::string("error: ") + e.what();
  }
}

inline int cmd_validate(const ValidateOptions& o, const Globals& g, std::ostream& log) {
  std::vector<std::string> files;
  for (const auto& p : o.paths) {
    if (fs::is_directory(p)) {
      for (const auto& f : expand_inputs({p})) files.push_back(f);
    } else {
      files.push_back(p);
    }
  }
  if (files.empty()) throw UsageError("validate: no files given");
  std::vector<std::optional<std::string>> result(files.size());
  parallel_for(files.size(), g.jobs, [&](std::size_t i) { result[i] = validate_file(files[i]); });
  std::size_t failed = 0;
  for (std::size_t i = 0; i < files.size(); ++i) {
    if (result[i]) {
      ++failed;
      log << "FAIL " << files[i] << ": " << *result[i] << '\n';
    } else {
      log << "PASS " << files[i] << '\n';
    }
  }
  log << "validate: " << files.size() - failed << "/" << files.size() << " passed\n";
  return failed ? kFailed : kOk;
}

inline int cmd_export_ply(const ExportOptions& o, const Globals&, std::ostream& log) {
  if (o.input.empty() || o.out.empty()) throw UsageError("export-ply: --input and --out are required");
  const auto t = uniform_twin(io::read_twin(o.input));
  std::vector<double> per_section(t.size());
  if (o.scalar == "radius") {
    for (std::size_t i = 0; i < t.size(); ++i) per_section[i] = t.radii[i] / t.meta.unit_scale;
  } else if (o.scalar == "area") {
    per_section = hemo::physical_geometry(t).area;
  } else if (o.scalar == "lesion") {
    for (std::size_t i = 0; i < t.size(); ++i) per_section[i] = t.lesion_mask[i] ? 1.0 : 0.0;
  } else if (o.scalar == "ffr" || o.scalar == "pressure") {
    const auto h = hemo::pressure_profile(hemo::physical_geometry(t), hemo::derive_segments(t), o.flow,
                                          o.inlet_mmhg * hemo::kDynePerMmHg, o.constants);
    for (std::size_t i = 0; i < t.size(); ++i) {
      per_section[i] = o.scalar == "ffr" ? h.ffr[i] : h.p[i] / hemo::kDynePerMmHg;
    }
  } else {
    throw UsageError("export-ply: --scalar must be radius, area, lesion, ffr or pressure");
  }
  auto out = open_out(o.out);
  io::write_ply(out, t, o.scalar, io::per_section_to_points(t, per_section));
  log << "export-ply: wrote " << o.out << '\n';
  return kOk;
}

/// Stratified fold index per item, shuffled within each class.
inline std::vector<std::size_t> stratified_folds(const std::vector<int>& labels, std::size_t k, std::uint64_t seed) {
  std::vector<std::size_t> fold(labels.size());
  std::mt19937_64 rng(seed);
  std::size_t offset = 0;
  for (int cls : {1, 0}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == cls) idx.push_back(i);
    }
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t j = 0; j < idx.size(); ++j) fold[idx[j]] = (offset + j) % k;
    offset += idx.size();
  }
  return fold;
}

/// Desk pipeline from one config: phantom donors -> A3M corpus -> pretrain;
/// a separate labeled A3M set (label = min FFR <= threshold) -> k-fold
/// fine-tune -> eval with mean and std over folds.
inline int cmd_pipeline(const PipelineOptions& o, const SynthOptions& synth, const HemoOptions& hemo_opt,
                        const PretrainOptions& pre, const FinetuneOptions& ft, const EvalOptions& ev,
                        const Globals& g, std::ostream& log) {
  ensure_dir(o.out);
  const fs::path root(o.out);
  if (o.folds < 2) throw UsageError("pipeline: need at least 2 folds");

  PhantomOptions ph;
  ph.count = o.donors;
  ph.out = (root / "donors").string();
  cmd_phantom(ph, g, log);

  SynthOptions s = synth;
  s.donors = {ph.out};
  s.count = o.corpus;
  s.out = (root / "corpus").string();
  s.stream = "synth";
  cmd_synth(s, g, log);
  s.count = o.labeled;
  s.out = (root / "labeled").string();
  s.stream = "labeled";
  cmd_synth(s, g, log);

  HemoOptions h = hemo_opt;
  h.inputs = {s.out};
  h.out = (root / "hemo").string();
  if (cmd_hemo(h, g, log) != kOk) throw Error("pipeline: labeled set has non-physiological twins");

  PretrainOptions p = pre;
  p.inputs = {(root / "corpus").string()};
  p.out = (root / "pretrained.json").string();
  p.log = (root / "pretrain_log.jsonl").string();
  cmd_pretrain(p, g, log);

  const auto ck = nnet::load_checkpoint(p.out);
  const auto samples = load_samples({s.out}, ck.config, g.jobs);
  const auto labels = labels_for(samples, read_labels((root / "hemo" / "summary.csv").string()), "hemo summary");
  const auto emb = nnet::embeddings(samples, ck.params, ck.config);
  const auto fold = stratified_folds(labels, o.folds, derive_seed(g.seed, "folds"));
  EvalOptions e = ev;
  e.out = (root / "eval").string();
  e.checkpoint.clear();
  e.predictions.clear();
  for (std::size_t f = 0; f < o.folds; ++f) {
    std::vector<Index> train, test;
    for (std::size_t i = 0; i < samples.size(); ++i) (fold[i] == f ? test : train).push_back(Index(i));
    std::vector<int> train_labels;
    for (auto i : train) train_labels.push_back(labels[std::size_t(i)]);
    nnet::EncoderParams prm = ck.params;
    auto cfg = ft.finetune;
    cfg.seed = derive_seed(g.seed, "finetune", f);
    nnet::finetune(prm, emb(train, Eigen::all), train_labels, ck.config, cfg);
    const auto prob = nnet::classify(emb(test, Eigen::all), prm);
    std::vector<Prediction> preds;
    for (std::size_t j = 0; j < test.size(); ++j) {
      preds.push_back({samples[std::size_t(test[j])].id, labels[std::size_t(test[j])], prob[Index(j)]});
    }
    const auto path = root / ("predictions_fold" + std::to_string(f) + ".csv");
    write_predictions(path, preds);
    e.predictions.push_back(path.string());
  }
  return cmd_eval(e, g, log);
}

// ---------------------------------------------------------------------------
// Argument binding

inline void bind_constants(CLI::App* app, HemoConstants& c) {
  app->add_option("--rho", c.rho, "blood density, g/cm^3");
  app->add_option("--mu", c.mu, "dynamic viscosity, poise");
  app->add_option("--zeta", c.zeta, "velocity profile factor");
  app->add_option("--kt", c.kt, "stenosis expansion coefficient");
}

struct EncoderStrings {
  std::string pool = "mean";
  std::vector<double> input_scale{1.0, 1.0, 1.0, 100.0, 10.0};
};

inline void bind_encoder(CLI::App* app, nnet::EncoderConfig& c, EncoderStrings& s) {
  app->add_option("--d", c.d, "base feature width");
  app->add_option("--blocks", c.blocks, "GCN blocks (pooling levels)");
  app->add_option("--layers-per-block", c.layers_per_block);
  app->add_option("--pool-ratio", c.pool_ratio, "Top-K keep ratio");
  app->add_option("--k-ca", c.k_ca, "nearest nodes per centerline point");
  app->add_option("--n-centerline", c.n_centerline, "output points along the centerline");
  app->add_option("--q-scale", c.q_scale, "flow output scale, cm^3/s");
  app->add_option("--p-scale", c.p_scale, "pressure output scale, dyne/cm^2");
  app->add_option("--input-scale", s.input_scale, "feature multipliers x,y,z,area,distance")->expected(5);
  app->add_option("--embedding-pool", s.pool)->check(CLI::IsMember({"mean", "max"}));
}

inline void apply_encoder_strings(nnet::EncoderConfig& c, const EncoderStrings& s) {
  c.embedding_pool = s.pool == "max" ? nnet::EmbeddingPool::max : nnet::EmbeddingPool::mean;
  std::copy(s.input_scale.begin(), s.input_scale.end(), c.input_scale.begin());
}

inline void bind_loss(CLI::App* app, physloss::LossConfig& c, std::string& friction) {
  app->add_option("--epsilon", c.epsilon);
  app->add_option("--k-end", c.k_end, "points averaged at each end for the global drop");
  app->add_option("--window", c.window);
  app->add_option("--stride", c.stride);
  app->add_option("--w-residual", c.w_residual);
  app->add_option("--w-global", c.w_global);
  app->add_option("--w-local", c.w_local);
  app->add_option("--friction", friction)->check(CLI::IsMember({"dissipative", "reversed"}));
  app->add_option("--local-edge-average", c.local_edge_average);
  bind_constants(app, c.constants);
}

inline void bind_optim(CLI::App* app, nnet::OptimConfig& c) {
  app->add_option("--lr", c.lr);
  app->add_option("--momentum", c.momentum);
  app->add_option("--epochs", c.epochs);
  app->add_option("--batch-size", c.batch_size);
  app->add_option("--clip-norm", c.clip_norm, "global gradient-norm clip, 0 disables");
}

/// Parses argv and runs one subcommand. Returns the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app("Synthetic coronary digital twins, 1D hemodynamics and a physics-pretrained graph encoder", "vtwin");
  app.option_defaults()->always_capture_default();
  app.set_config("--config", "", "TOML config file; [section] per subcommand, flags override");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.require_subcommand(1, 1);
  app.fallthrough();

  Globals g;
  std::string emit;
  app.add_option("--seed", g.seed, "global seed");
  app.add_option("--jobs", g.jobs, "worker threads")->check(CLI::PositiveNumber);
  app.add_option("--emit-config", emit, "write the effective config to this file")->configurable(false);

  PhantomOptions ph;
  auto* c_ph = app.add_subcommand("phantom", "generate procedural donor twins");
  c_ph->add_option("--count", ph.count);
  c_ph->add_option("--out", ph.out);
  c_ph->add_option("--n-points", ph.params.n_points);
  c_ph->add_option("--k", ph.params.k, "boundary points per section");
  c_ph->add_option("--max-stenoses", ph.params.max_stenoses);
  c_ph->add_option("--ds-min", ph.params.ds_min, "minimum diameter stenosis fraction");
  c_ph->add_option("--ds-max", ph.params.ds_max);

  SynthOptions sy;
  auto* c_sy = app.add_subcommand("synth", "A3M synthetic corpus from donor twins");
  c_sy->add_option("--donors", sy.donors, "donor twin files or directories");
  c_sy->add_option("--count", sy.count);
  c_sy->add_option("--out", sy.out);
  c_sy->add_option("--target-n", sy.target_n, "centerline points per twin");
  c_sy->add_option("--target-k", sy.target_k, "boundary points per section");
  c_sy->add_option("--bend-amplitude-max", sy.ranges.bend_amplitude_max);
  c_sy->add_option("--bend-frequency-min", sy.ranges.bend_frequency_min);
  c_sy->add_option("--bend-frequency-max", sy.ranges.bend_frequency_max);
  c_sy->add_option("--smoothing-sigma-max", sy.ranges.smoothing_sigma_max);
  c_sy->add_option("--radius-noise-max", sy.ranges.radius_noise_sigma_max);
  c_sy->add_option("--absolute-radius-noise", sy.absolute_radius_noise);

  GraphOptions gr;
  auto* c_gr = app.add_subcommand("graph", "vascular graphs from twins");
  c_gr->add_option("--inputs", gr.inputs);
  c_gr->add_option("--out", gr.out);
  c_gr->add_option("--format", gr.format)->check(CLI::IsMember({"binary", "json"}));

  HemoOptions he;
  auto* c_he = app.add_subcommand("hemo", "reference 1D pressure, flow and FFR profiles");
  c_he->add_option("--inputs", he.inputs);
  c_he->add_option("--out", he.out);
  c_he->add_option("--flow", he.flow, "flow rate, cm^3/s");
  c_he->add_option("--inlet-mmhg", he.inlet_mmhg, "inlet pressure, mmHg");
  c_he->add_option("--ffr-threshold", he.ffr_threshold, "label = min FFR <= threshold");
  bind_constants(c_he, he.constants);

  PretrainOptions pr;
  EncoderStrings pr_enc;
  std::string friction = "dissipative";
  auto* c_pr = app.add_subcommand("pretrain", "physics-informed pretraining of the encoder");
  c_pr->add_option("--inputs", pr.inputs);
  c_pr->add_option("--out", pr.out, "checkpoint path");
  c_pr->add_option("--log", pr.log, "JSON-lines training log");
  c_pr->add_option("--init", pr.init, "start from this checkpoint");
  bind_encoder(c_pr, pr.encoder, pr_enc);
  bind_loss(c_pr, pr.loss, friction);
  bind_optim(c_pr, pr.optim);

  FinetuneOptions fi;
  auto* c_fi = app.add_subcommand("finetune", "train the classifier head on frozen embeddings");
  c_fi->add_option("--checkpoint", fi.checkpoint);
  c_fi->add_option("--inputs", fi.inputs);
  c_fi->add_option("--labels", fi.labels, "CSV with id,label columns");
  c_fi->add_option("--out", fi.out, "output checkpoint");
  c_fi->add_option("--predictions", fi.predictions, "training-set predictions CSV");
  c_fi->add_option("--lr", fi.finetune.lr);
  c_fi->add_option("--momentum", fi.finetune.momentum);
  c_fi->add_option("--epochs", fi.finetune.epochs);

  EvalOptions ev;
  auto* c_ev = app.add_subcommand("eval", "classification metrics and curves");
  c_ev->add_option("--predictions", ev.predictions, "CSV files (id,label,probability), one per fold");
  c_ev->add_option("--checkpoint", ev.checkpoint);
  c_ev->add_option("--inputs", ev.inputs);
  c_ev->add_option("--labels", ev.labels);
  c_ev->add_option("--out", ev.out);
  c_ev->add_option("--threshold", ev.threshold, "decision threshold for F1 and accuracy");

  ValidateOptions va;
  auto* c_va = app.add_subcommand("validate", "check twin and graph files against all invariants");
  c_va->add_option("paths", va.paths, "files or directories")->configurable(false);

  ExportOptions ex;
  auto* c_ex = app.add_subcommand("export-ply", "boundary points with a scalar channel as PLY");
  c_ex->add_option("--input", ex.input);
  c_ex->add_option("--out", ex.out);
  c_ex->add_option("--scalar", ex.scalar)->check(CLI::IsMember({"radius", "area", "lesion", "ffr", "pressure"}));
  c_ex->add_option("--flow", ex.flow);
  c_ex->add_option("--inlet-mmhg", ex.inlet_mmhg);
  bind_constants(c_ex, ex.constants);

  PipelineOptions pi;
  auto* c_pi = app.add_subcommand("pipeline", "donors -> corpus -> pretrain -> k-fold finetune -> eval");
  c_pi->add_option("--out", pi.out);
  c_pi->add_option("--donors", pi.donors, "phantom donor count");
  c_pi->add_option("--corpus", pi.corpus, "pretraining corpus size");
  c_pi->add_option("--labeled", pi.labeled, "labeled set size");
  c_pi->add_option("--folds", pi.folds);

  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\nRun with --help for more information.\n";
    return kUsage;
  }

  try {
    if (!emit.empty()) open_out(emit) << app.config_to_str(true, true);
    apply_encoder_strings(pr.encoder, pr_enc);
    pr.loss.friction = friction == "reversed" ? physloss::FrictionSign::reversed : physloss::FrictionSign::dissipative;
    if (c_ph->parsed()) return cmd_phantom(ph, g, out);
    if (c_sy->parsed()) return cmd_synth(sy, g, out);
    if (c_gr->parsed()) return cmd_graph(gr, g, out);
    if (c_he->parsed()) return cmd_hemo(he, g, out);
    if (c_pr->parsed()) return cmd_pretrain(pr, g, out);
    if (c_fi->parsed()) return cmd_finetune(fi, g, out);
    if (c_ev->parsed()) return cmd_eval(ev, g, out);
    if (c_va->parsed()) return cmd_validate(va, g, out);
    if (c_ex->parsed()) return cmd_export_ply(ex, g, out);
    if (c_pi->parsed()) return cmd_pipeline(pi, sy, he, pr, fi, ev, g, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kFailed;
  }
  return kUsage;
}

}  // namespace vtwin::cli
