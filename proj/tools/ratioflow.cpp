// ratioflow command-line driver.
//
// Exit codes: 0 success, 1 internal error, 2 input error, 3 estimation
// failure, 4 invalid comparison.

#include <CLI11.hpp>

#include <ratioflow/backtest.hpp>
#include <ratioflow/catalog.hpp>
#include <ratioflow/config.hpp>
#include <ratioflow/event_io.hpp>
#include <ratioflow/parallel.hpp>
#include <ratioflow/report.hpp>
#include <ratioflow/selection.hpp>
#include <ratioflow/simulator.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#ifndef RATIOFLOW_BUILD
#define RATIOFLOW_BUILD "unknown"
#endif

namespace fs = std::filesystem;
using namespace ratioflow;

namespace {

enum Exit { kOk = 0, kInternal = 1, kInput = 2, kEstimation = 3, kComparison = 4 };

// ---------------------------------------------------------------------------
// Logging

enum class LogLevel { Error, Warn, Info, Debug };

LogLevel log_level() {
  static const LogLevel level = [] {
    const char* env = std::getenv("RATIOFLOW_LOG");
    const std::string v = env ? env : "warn";
    if (v == "error") return LogLevel::Error;
    if (v == "info") return LogLevel::Info;
    if (v == "debug") return LogLevel::Debug;
    return LogLevel::Warn;
  }();
  return level;
}

void log(LogLevel l, const std::string& msg) {
  static constexpr const char* names[] = {"error", "warn", "info", "debug"};
  if (l <= log_level()) std::cerr << "ratioflow " << names[static_cast<int>(l)] << ": " << msg << '\n';
}

/// Carries an exit code up to main.
struct Failure {
  int code;
  std::string message;
};

int exit_code_for(ErrorCode c) {
  switch (c) {
    case ErrorCode::MixedT: return kComparison;
    case ErrorCode::SingularHessian:
    case ErrorCode::EmptyDataset: return kEstimation;
    case ErrorCode::EnvelopeViolation: return kInternal;
    default: return kInput;
  }
}

std::string version() {
  std::string v(kVersion);
  const std::string build = RATIOFLOW_BUILD;
  if (build != "unknown") v += "+" + build;
  return v;
}

// ---------------------------------------------------------------------------
// Run configuration: defaults, then the config file, then flags.

struct Flags {
  std::string config;
  std::string models;
  std::optional<int> lookback;
  std::optional<std::size_t> jobs;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool audit = false;
  std::vector<std::string> inputs;
  std::string instrument;
};

Json defaults() {
  Json j;
  j["inputs"] = Json::array();
  j["instrument"] = "";
  j["session"] = Json{{"open_ns", nullptr}, {"close_ns", nullptr}};
  j["tick_size"] = 1;
  j["models"] = "imb1_e_es_la1";
  j["fit"] = to_json(FitOptions{});
  j["lookback"] = nullptr;
  j["lookbacks"] = nullptr;
  j["out"] = "out";
  j["jobs"] = 1;
  j["seed"] = nullptr;
  j["audit"] = false;
  j["write_predictions"] = false;
  j["shared_mask"] = false;
  return j;
}

Json resolve(const Flags& f) {
  Json run = defaults();
  if (!f.config.empty()) {
    const Json file = load_json_file(f.config);
    if (!file.is_object()) throw Error(ErrorCode::ConfigInvalid, f.config + ": expected a JSON object");
    for (const auto& [k, v] : file.items()) {
      if (k == "fit" && v.is_object())
        for (const auto& [fk, fv] : v.items()) run["fit"][fk] = fv;
      else
        run[k] = v;
    }
    // Relative input paths are taken from the config file's directory.
    const auto base = fs::path(f.config).parent_path();
    for (auto& in : run["inputs"])
      if (in.is_string() && fs::path(in.get<std::string>()).is_relative())
        in = (base / in.get<std::string>()).lexically_normal().string();
  }
  if (!f.inputs.empty()) run["inputs"] = f.inputs;
  if (!f.instrument.empty()) run["instrument"] = f.instrument;
  if (!f.models.empty()) run["models"] = f.models;
  if (f.lookback) run["lookback"] = *f.lookback;
  if (f.jobs) run["jobs"] = *f.jobs;
  if (f.seed) run["seed"] = *f.seed;
  if (!f.out.empty()) run["out"] = f.out;
  if (f.audit) run["audit"] = true;
  return run;
}

std::vector<ModelSpec> resolve_models(const Json& run) {
  std::vector<std::string> names;
  const auto& m = run.at("models");
  if (m.is_array()) {
    for (const auto& v : m) {
      if (v.is_object()) continue;
      names.push_back(v.get<std::string>());
    }
  } else {
    std::string s = m.get<std::string>();
    for (std::size_t pos = 0; pos <= s.size();) {
      const auto comma = s.find(',', pos);
      const auto item = s.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
      if (!item.empty()) names.push_back(item);
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
  }
  std::vector<ModelSpec> out;
  for (const auto& n : names) {
    if (n == "catalog" || n == "daily") {
      for (auto& spec : model_catalog())
        if (n == "catalog" || spec.recalibration_days == 1) out.push_back(std::move(spec));
      continue;
    }
    if (auto spec = find_model(n)) out.push_back(std::move(*spec));
    else throw Error(ErrorCode::UnknownModel, "no catalog model named '" + n + "'");
  }
  // Inline ModelSpec objects.
  if (m.is_array())
    for (const auto& v : m)
      if (v.is_object()) {
        auto spec = model_from_json(v);
        spec.validate();
        out.push_back(std::move(spec));
      }
  if (out.empty()) throw Error(ErrorCode::ConfigInvalid, "no models requested");
  return out;
}

FitOptions resolve_fit(const Json& run) { return fit_options_from_json(run.at("fit")); }

std::size_t resolve_jobs(const Json& run) {
  const auto j = run.at("jobs").get<std::size_t>();
  return j == 0 ? std::max(1u, std::thread::hardware_concurrency()) : j;
}

ReplayOptions resolve_replay(const Json& run) {
  ReplayOptions o;
  const auto& s = run.at("session");
  if (s.contains("open_ns") && !s.at("open_ns").is_null()) o.open = s.at("open_ns").get<Timestamp>();
  if (s.contains("close_ns") && !s.at("close_ns").is_null()) o.close = s.at("close_ns").get<Timestamp>();
  return o;
}

// ---------------------------------------------------------------------------
// Inputs

struct Instrument {
  std::string id;
  std::vector<OrderEvent> events;
  std::vector<SessionArrivals> sessions;
};

std::string instrument_id(const fs::path& p) {
  auto stem = p.filename().string();
  for (const char* ext : {".gz", ".csv", ".ndjson", ".jsonl", ".json"})
    if (stem.size() > std::strlen(ext) && stem.ends_with(ext)) stem.resize(stem.size() - std::strlen(ext));
  return stem;
}

/// One instrument per input file. Parses and replays everything before any
/// output is written, so bad input never leaves partial results.
std::vector<Instrument> load_instruments(const Json& run) {
  const auto& inputs = run.at("inputs");
  if (!inputs.is_array() || inputs.empty()) throw Failure{kInput, "no input files given (use --input or \"inputs\")"};
  const auto replay_opts = resolve_replay(run);
  const std::string forced = run.at("instrument").get<std::string>();
  std::vector<Instrument> out;
  for (const auto& in : inputs) {
    const fs::path path = in.get<std::string>();
    Instrument inst;
    inst.id = forced.empty() || inputs.size() > 1 ? instrument_id(path) : forced;
    std::vector<std::size_t> lines;
    try {
      for_each_event(path, [&](const OrderEvent& ev, std::size_t line) {
        inst.events.push_back(ev);
        lines.push_back(line);
      });
    } catch (const Error& e) {
      throw Failure{kInput, path.string() + ": " + e.what()};
    }
    if (inst.events.empty()) throw Failure{kInput, path.string() + ": no events"};
    try {
      inst.sessions = group_sessions(inst.events, replay_opts, lines);
    } catch (const Error& e) {
      throw Failure{kInput, path.string() + ": " + e.what()};
    }
    log(LogLevel::Info, inst.id + ": " + std::to_string(inst.events.size()) + " events, " +
                         std::to_string(inst.sessions.size()) + " sessions");
    out.push_back(std::move(inst));
  }
  return out;
}

void prepare_out(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Failure{kInput, "cannot create output directory " + dir.string() + ": " + ec.message()};
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Failure{kInput, "cannot write " + path.string()};
  f << text;
}

std::string dump(const Json& j) { return j.dump(2) + "\n"; }

/// Fit window for a model: l-day specs calibrate on l sessions per step.
std::size_t window_sessions(const ModelSpec& m, const Json& run) {
  const int base = run.at("lookback").is_null() ? 1 : run.at("lookback").get<int>();
  if (base < 1) throw Error(ErrorCode::ConfigInvalid, "lookback must be >= 1");
  return static_cast<std::size_t>(base) * static_cast<std::size_t>(m.recalibration_days);
}

std::uint32_t shared_mask(const std::vector<ModelSpec>& models) {
  int m = 0;
  for (const auto& s : models) m = std::max(m, s.max_lag());
  return static_cast<std::uint32_t>(m);
}

struct FitTask {
  std::size_t instrument;
  std::size_t model;
  std::size_t first;
  std::size_t last;
};

struct FitOutcome {
  std::optional<FitResult> fit;
  std::string error;
  std::size_t skipped = 0;
};

FitOutcome run_fit(const Instrument& inst, const ModelSpec& model, std::size_t first, std::size_t last,
                   const FitOptions& opts, std::optional<std::uint32_t> mask) {
  FitOutcome out;
  const auto arrivals = detail::concat_arrivals(inst.sessions, first, last);
  DatasetOptions dopts;
  dopts.session_count = last - first + 1;
  dopts.min_order_index = mask;
  try {
    const auto built = build_dataset(model, arrivals, dopts);
    out.skipped = built.skipped();
    out.fit = fit_qmle(built.data, opts);
  } catch (const Error& e) {
    out.error = e.what();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Subcommands

int cmd_simulate(const Json& run, const std::string& hash) {
  if (!run.contains("simulation")) throw Failure{kInput, "config has no \"simulation\" section"};
  Json sim_json = run.at("simulation");
  if (!run.at("seed").is_null()) sim_json["seed"] = run.at("seed");
  const auto cfg = sim_config_from_json(sim_json);
  const fs::path out = run.at("out").get<std::string>();
  const OutputMeta meta{version(), hash};
  const auto sessions = simulate(cfg, 0, resolve_jobs(run));
  prepare_out(out);

  std::size_t orders = 0;
  for (const auto& s : sessions) orders += s.truth.size();
  Json manifest;
  manifest["version"] = meta.version;
  manifest["config_hash"] = hash;
  manifest["seed"] = cfg.seed;
  manifest["sessions"] = cfg.sessions;
  manifest["market_orders"] = orders;

  const bool book = std::holds_alternative<BookDriven>(cfg.dynamics);
  if (book) {
    const auto events = concat_events(sessions);
    std::ostringstream ev;
    ev << "# ratioflow " << meta.version << " config " << hash << '\n';
    write_events_csv(ev, events);
    write_text(out / "events.csv", ev.str());
    manifest["events"] = events.size();
    manifest["files"] = Json::array({"events.csv", "truth.ndjson"});
  } else {
    // OU paths have no order book behind them: emit the labeled dataset.
    Dataset data(cfg.model.dimension(), sessions.size());
    for (const auto& s : sessions)
      for (const auto& g : s.truth)
        if (g.complete_history) data.push(g.side, g.x, s.id, g.timestamp, g.order_index);
    std::ostringstream ds;
    write_dataset_csv(ds, data, meta);
    write_text(out / "dataset.csv", ds.str());
    manifest["files"] = Json::array({"dataset.csv", "truth.ndjson"});
  }
  std::ostringstream truth;
  write_truth_ndjson(truth, sessions);
  write_text(out / "truth.ndjson", truth.str());
  manifest["config"] = run;
  write_text(out / "manifest.json", dump(manifest));
  log(LogLevel::Info, "simulated " + std::to_string(orders) + " market orders");
  return kOk;
}

int cmd_ingest_check(const Json& run, const std::string& hash) {
  const auto instruments = load_instruments(run);
  Json j;
  j["version"] = version();
  j["config_hash"] = hash;
  auto list = Json::array();
  for (const auto& inst : instruments) {
    Json ij;
    ij["instrument"] = inst.id;
    ij["events"] = inst.events.size();
    auto sess = Json::array();
    std::size_t orders = 0, one_sided = 0;
    for (const auto& s : inst.sessions) {
      std::size_t no_spread = 0;
      for (const auto& a : s.arrivals) no_spread += !a.spread;
      orders += s.arrivals.size();
      one_sided += no_spread;
      sess.push_back(Json{{"session_id", s.id},
                          {"events", s.end_event - s.first_event},
                          {"market_orders", s.arrivals.size()},
                          {"one_sided_at_arrival", no_spread}});
    }
    ij["market_orders"] = orders;
    ij["one_sided_at_arrival"] = one_sided;
    ij["sessions"] = std::move(sess);
    list.push_back(std::move(ij));
  }
  j["instruments"] = std::move(list);
  const auto text = dump(j);
  if (!run.at("out").get<std::string>().empty() && run.contains("out")) {
    const fs::path out = run.at("out").get<std::string>();
    prepare_out(out);
    write_text(out / "ingest.json", text);
  }
  std::cout << text;
  return kOk;
}

int cmd_fit(const Json& run, const std::string& hash) {
  const auto models = resolve_models(run);
  const auto fit_opts = resolve_fit(run);
  const auto instruments = load_instruments(run);
  const fs::path out = run.at("out").get<std::string>();
  const OutputMeta meta{version(), hash};

  std::vector<FitTask> tasks;
  for (std::size_t i = 0; i < instruments.size(); ++i)
    for (std::size_t m = 0; m < models.size(); ++m) {
      const std::size_t w = window_sessions(models[m], run);
      const std::size_t n = instruments[i].sessions.size();
      if (n < w) {
        log(LogLevel::Info, instruments[i].id + "/" + models[m].name + ": needs " + std::to_string(w) + " sessions, have " +
                             std::to_string(n) + "; skipped");
        continue;
      }
      for (std::size_t first = 0; first + w <= n; first += w) tasks.push_back({i, m, first, first + w - 1});
    }
  if (tasks.empty()) throw Failure{kInput, "no model has enough sessions for one calibration window"};

  std::vector<FitOutcome> results(tasks.size());
  parallel_for(tasks.size(), resolve_jobs(run), [&](std::size_t k) {
    const auto& t = tasks[k];
    results[k] = run_fit(instruments[t.instrument], models[t.model], t.first, t.last, fit_opts, std::nullopt);
  });

  prepare_out(out);
  std::vector<std::string> failures;
  for (std::size_t k = 0; k < tasks.size(); ++k) {
    const auto& t = tasks[k];
    const auto& inst = instruments[t.instrument];
    const auto& model = models[t.model];
    const std::string window =
        "sessions_" + std::to_string(inst.sessions[t.first].id) + "-" + std::to_string(inst.sessions[t.last].id);
    const std::string label = inst.id + "/" + model.name + "/" + window;
    Json j;
    if (results[k].fit) {
      j = fit_to_json(*results[k].fit, model, meta);
      if (!results[k].fit->usable()) failures.push_back(label + ": did not converge");
    } else {
      j["version"] = meta.version;
      j["config_hash"] = hash;
      j["model"] = model.name;
      j["error"] = results[k].error;
      failures.push_back(label + ": " + results[k].error);
    }
    j["instrument"] = inst.id;
    j["window"] = Json{{"first_session", inst.sessions[t.first].id}, {"last_session", inst.sessions[t.last].id}};
    j["skipped_samples"] = results[k].skipped;
    write_text(out / "fits" / inst.id / model.name / (window + ".json"), dump(j));
  }
  log(LogLevel::Info, std::to_string(tasks.size()) + " fits written");
  if (!failures.empty()) {
    for (const auto& f : failures) log(LogLevel::Error, "fit failed: " + f);
    return kEstimation;
  }
  return kOk;
}

int cmd_select(const Json& run, const std::string& hash) {
  const auto models = resolve_models(run);
  const auto fit_opts = resolve_fit(run);

  // Every model's T must agree before anything is fitted.
  std::map<std::size_t, std::vector<std::string>> by_t;
  for (const auto& m : models) by_t[window_sessions(m, run)].push_back(m.name);
  if (by_t.size() > 1) {
    std::string msg = "models span different T:";
    for (const auto& [t, names] : by_t) msg += " T=" + std::to_string(t) + " (" + names.front() + (names.size() > 1 ? ", ..." : "") + ")";
    throw Failure{kComparison, msg};
  }
  const std::size_t T = by_t.begin()->first;
  if (T == 1) log(LogLevel::Warn, "T = 1: log T = 0, so QBIC equals QAIC - 2d and QCAIC equals QAIC - d");

  const auto instruments = load_instruments(run);
  const fs::path out = run.at("out").get<std::string>();
  const OutputMeta meta{version(), hash};
  // All models score the same orders, whatever their lag depth.
  const std::uint32_t mask = shared_mask(models);

  std::vector<FitTask> tasks;
  for (std::size_t i = 0; i < instruments.size(); ++i) {
    const std::size_t n = instruments[i].sessions.size();
    if (n < T)
      throw Failure{kInput, instruments[i].id + ": needs " + std::to_string(T) + " sessions, has " + std::to_string(n)};
    // Calibrate on the most recent T sessions.
    for (std::size_t m = 0; m < models.size(); ++m) tasks.push_back({i, m, n - T, n - 1});
  }
  std::vector<FitOutcome> results(tasks.size());
  parallel_for(tasks.size(), resolve_jobs(run), [&](std::size_t k) {
    const auto& t = tasks[k];
    results[k] = run_fit(instruments[t.instrument], models[t.model], t.first, t.last, fit_opts, mask);
  });

  std::vector<std::vector<CriterionReport>> per_instrument(instruments.size());
  auto excluded = Json::array();
  for (std::size_t k = 0; k < tasks.size(); ++k) {
    const auto& t = tasks[k];
    const auto& r = results[k];
    std::string reason;
    if (!r.fit) reason = r.error;
    else if (!r.fit->converged) reason = r.fit->boundary_hit ? "estimate on the parameter box edge" : "did not converge";
    if (!reason.empty()) {
      log(LogLevel::Warn, instruments[t.instrument].id + "/" + models[t.model].name + " excluded from ranking: " + reason);
      excluded.push_back(Json{{"instrument", instruments[t.instrument].id}, {"model", models[t.model].name}, {"reason", reason}});
      continue;
    }
    per_instrument[t.instrument].push_back(criteria(*r.fit, models[t.model].name));
  }
  for (std::size_t i = 0; i < instruments.size(); ++i)
    if (per_instrument[i].empty()) throw Failure{kEstimation, instruments[i].id + ": no model could be ranked"};

  SelectionCounts counts;
  try {
    counts = selection_counts(per_instrument);
  } catch (const Error& e) {
    throw Failure{exit_code_for(e.code()), e.what()};
  }

  prepare_out(out);
  std::ostringstream csv;
  for (std::size_t i = 0; i < instruments.size(); ++i)
    write_criteria_csv(csv, instruments[i].id, per_instrument[i], meta, i == 0);
  write_text(out / "criteria.csv", csv.str());
  Json summary = selection_to_json(counts, meta);
  summary["T"] = T;
  summary["t_equals_one"] = T == 1;
  summary["shared_min_order_index"] = mask;
  summary["instruments"] = instruments.size();
  summary["excluded"] = std::move(excluded);
  auto winners = Json::object();
  for (std::size_t i = 0; i < instruments.size(); ++i) {
    Json w;
    for (auto c : kAllCriteria) w[std::string(to_string(c))] = rank_models(per_instrument[i], c).front().model;
    winners[instruments[i].id] = std::move(w);
  }
  summary["winners"] = std::move(winners);
  write_text(out / "selection.json", dump(summary));
  return kOk;
}

int cmd_backtest(const Json& run, const std::string& hash) {
  const auto models = resolve_models(run);
  const auto instruments = load_instruments(run);
  const fs::path out = run.at("out").get<std::string>();
  const OutputMeta meta{version(), hash};

  std::vector<int> ls;
  const auto& sweep = run.at("lookbacks");
  if (sweep.is_string() && sweep.get<std::string>() == "study") ls.assign(kStudyLookbacks.begin(), kStudyLookbacks.end());
  else if (sweep.is_array()) ls = sweep.get<std::vector<int>>();
  if (!run.at("lookback").is_null()) ls = {run.at("lookback").get<int>()};
  if (ls.empty()) ls = {1};
  for (int l : ls)
    if (l < 1) throw Failure{kInput, "lookback values must be >= 1"};

  BacktestOptions opts;
  opts.fit = resolve_fit(run);
  opts.audit = run.at("audit").get<bool>();
  opts.audit_stride = run.value("audit_stride", std::size_t{1});
  opts.keep_records = run.at("write_predictions").get<bool>();
  opts.replay = resolve_replay(run);
  // Optionally score every model on the orders the deepest-lag model can score.
  if (run.at("shared_mask").get<bool>()) opts.min_order_index = shared_mask(models);

  struct Task {
    std::size_t instrument, model;
  };
  std::vector<Task> tasks;
  for (std::size_t i = 0; i < instruments.size(); ++i)
    for (std::size_t m = 0; m < models.size(); ++m) tasks.push_back({i, m});
  std::vector<std::vector<RecalibrationRow>> rows(tasks.size());
  parallel_for(tasks.size(), resolve_jobs(run), [&](std::size_t k) {
    const auto& inst = instruments[tasks[k].instrument];
    auto o = opts;
    o.instrument = inst.id;
    const auto& model = models[tasks[k].model];
    if (ls.size() == 1) {
      RecalibrationRow row;
      row.lookback_days = ls.front();
      CalibrationSchedule s;
      s.lookback_days = s.step_days = ls.front();
      try {
        row.report = run_backtest(inst.sessions, model, s, o, inst.events);
      } catch (const Error& e) {
        row.error = e.what();
      }
      rows[k].push_back(std::move(row));
    } else {
      // Audits need the event stream, which the sweep helper does not take.
      const int common = [&] {
        int c = 0;
        for (int l : ls)
          if (static_cast<std::size_t>(l) < inst.sessions.size()) c = std::max(c, l);
        return c == 0 ? *std::max_element(ls.begin(), ls.end()) : c;
      }();
      for (int l : ls) {
        RecalibrationRow row;
        row.lookback_days = l;
        CalibrationSchedule s;
        s.lookback_days = s.step_days = l;
        s.first_predict = static_cast<std::size_t>(common);
        try {
          row.report = run_backtest(inst.sessions, model, s, o, inst.events);
        } catch (const Error& e) {
          row.error = e.what();
        }
        rows[k].push_back(std::move(row));
      }
    }
  });

  std::vector<AccuracyReport> reports;
  std::size_t violations = 0, failed = 0;
  for (std::size_t k = 0; k < tasks.size(); ++k)
    for (auto& row : rows[k]) {
      if (!row.report) {
        log(LogLevel::Warn, instruments[tasks[k].instrument].id + "/" + models[tasks[k].model].name + " l=" +
                             std::to_string(row.lookback_days) + ": " + row.error);
        AccuracyReport empty;
        empty.instrument = instruments[tasks[k].instrument].id;
        empty.model = models[tasks[k].model].name;
        empty.lookback_days = row.lookback_days;
        reports.push_back(std::move(empty));
        continue;
      }
      violations += row.report->audit_violations;
      failed += row.report->failed_windows;
      reports.push_back(std::move(*row.report));
    }
  if (reports.empty()) throw Failure{kInput, "nothing to backtest"};

  prepare_out(out);
  std::ostringstream csv;
  write_accuracy_csv(csv, reports, meta);
  write_text(out / "accuracy.csv", csv.str());
  if (opts.keep_records)
    for (const auto& r : reports) {
      if (r.records.empty()) continue;
      std::ostringstream nd;
      write_predictions_ndjson(nd, r);
      write_text(out / "predictions" / (r.instrument + "_" + r.model + "_l" + std::to_string(r.lookback_days) + ".ndjson"),
                 nd.str());
    }
  if (opts.audit) {
    std::size_t checked = 0;
    for (const auto& r : reports) checked += r.audit_checked;
    log(LogLevel::Info, "audit: " + std::to_string(checked) + " predictions recomputed, " + std::to_string(violations) +
                         " look-ahead violations");
    Json a{{"version", meta.version}, {"config_hash", hash}, {"checked", checked}, {"violations", violations}};
    write_text(out / "audit.json", dump(a));
    if (violations > 0) {
      log(LogLevel::Error, "look-ahead audit failed");
      return kInternal;
    }
  }
  if (failed > 0) log(LogLevel::Warn, std::to_string(failed) + " calibration windows failed to fit");
  return kOk;
}

/// Summarizes accuracy.csv and selection.json found in the output directory.
int cmd_report(const Json& run, const std::string& hash) {
  const fs::path dir = run.at("out").get<std::string>();
  std::ostringstream md;
  md << "# ratioflow report\n\nversion " << version() << ", config " << hash << "\n";
  bool any = false;

  if (std::ifstream f(dir / "accuracy.csv"); f) {
    any = true;
    std::map<std::pair<std::string, int>, std::pair<double, double>> agg;  // (model, l) -> (hits, n)
    std::string line;
    bool header = false;
    while (std::getline(f, line)) {
      if (line.empty() || line.front() == '#') continue;
      if (!header) {
        header = true;
        continue;
      }
      std::vector<std::string> cols;
      std::stringstream ss(line);
      for (std::string c; std::getline(ss, c, ',');) cols.push_back(c);
      if (cols.size() < 5 || cols[4].empty()) continue;
      const double n = std::stod(cols[3]);
      auto& a = agg[{cols[1], std::stoi(cols[2])}];
      a.first += n * std::stod(cols[4]);
      a.second += n;
    }
    md << "\n## Accuracy (event-weighted over instruments)\n\n| model | l | predictions | accuracy |\n|---|---|---|---|\n";
    for (const auto& [key, v] : agg)
      md << "| " << key.first << " | " << key.second << " | " << static_cast<std::size_t>(v.second) << " | "
         << fmt(v.second > 0 ? v.first / v.second : 0.0) << " |\n";
  }
  if (fs::exists(dir / "selection.json")) {
    any = true;
    const auto sel = load_json_file((dir / "selection.json").string());
    md << "\n## Selection counts\n\n| criterion | model | count |\n|---|---|---|\n";
    for (const auto& [c, models] : sel.at("counts").items())
      for (const auto& [m, n] : models.items()) md << "| " << c << " | " << m << " | " << n.get<int>() << " |\n";
  }
  if (!any) throw Failure{kInput, "no accuracy.csv or selection.json in " + dir.string()};
  write_text(dir / "report.md", md.str());
  std::cout << md.str();
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Intensity-ratio models of market-order side: fit, select, backtest, simulate."};
  app.set_version_flag("--version", version());
  app.require_subcommand(1);
  app.fallthrough();

  Flags f;
  app.add_option("--config", f.config, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--models", f.models, "comma-separated model names, 'catalog', or 'daily' (daily-recalibrated catalog models)");
  app.add_option("--lookback", f.lookback, "calibration sessions per window")->check(CLI::PositiveNumber);
  app.add_option("--jobs", f.jobs, "worker threads (0 = all cores)");
  app.add_option("--seed", f.seed, "simulation seed");
  app.add_option("--out", f.out, "output directory");
  app.add_flag("--audit", f.audit, "recompute features from the event prefix and check for look-ahead");
  app.add_option("--input,-i", f.inputs, "event files (one instrument each)");
  app.add_option("--instrument", f.instrument, "instrument id for a single input");

  auto* simulate_cmd = app.add_subcommand("simulate", "generate synthetic order flow with ground truth");
  auto* ingest_cmd = app.add_subcommand("ingest-check", "parse and replay inputs, report per-session counts");
  auto* fit_cmd = app.add_subcommand("fit", "fit models per calibration window");
  auto* select_cmd = app.add_subcommand("select", "rank models by QAIC, QCAIC and QBIC");
  auto* backtest_cmd = app.add_subcommand("backtest", "rolling out-of-sample side prediction");
  auto* report_cmd = app.add_subcommand("report", "summarize outputs in --out");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kInput;
  }

  try {
    const Json run = resolve(f);
    // Where results go and how many threads make them do not change them.
    Json hashed = run;
    hashed.erase("out");
    hashed.erase("jobs");
    const std::string hash = config_hash(hashed.dump());
    log(LogLevel::Debug, "resolved config " + run.dump());
    if (simulate_cmd->parsed()) return cmd_simulate(run, hash);
    if (ingest_cmd->parsed()) return cmd_ingest_check(run, hash);
    if (fit_cmd->parsed()) return cmd_fit(run, hash);
    if (select_cmd->parsed()) return cmd_select(run, hash);
    if (backtest_cmd->parsed()) return cmd_backtest(run, hash);
    if (report_cmd->parsed()) return cmd_report(run, hash);
  } catch (const Failure& e) {
    log(LogLevel::Error, e.message);
    return e.code;
  } catch (const Error& e) {
    log(LogLevel::Error, e.what());
    return exit_code_for(e.code());
  } catch (const nlohmann::json::exception& e) {
    log(LogLevel::Error, std::string("config: ") + e.what());
    return kInput;
  } catch (const std::exception& e) {
    log(LogLevel::Error, e.what());
    return kInternal;
  }
  return kInternal;
}
