// Copyright 2026 The fashionmt Authors
// SPDX-License-Identifier: Apache-2.0

// fashionmt: data generation, training, evaluation, ablations and plots.
//
// Failures print one line "error: <class>: <message>" to stderr and exit with
// the class's code (see README).

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "fashionmt/checkpoint.hpp"
#include "fashionmt/config.hpp"
#include "fashionmt/error.hpp"
#include "fashionmt/evaluate.hpp"
#include "fashionmt/plot.hpp"
#include "fashionmt/training.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace fashionmt;

namespace {

constexpr int kUsageExit = 2;
constexpr int kInternalExit = 1;

void write_text(const fs::path& path, const std::string& text) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kIo, "cannot write '" + path.string() + "'");
  out << text;
  if (!out) fail(ErrorKind::kIo, "write failed for '" + path.string() + "'");
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot read '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return json::parse(ss.str());
  } catch (const json::parse_error& e) {
    fail(ErrorKind::kFormat, "'" + path.string() + "' is not valid JSON");
  }
}

RunConfig config_or_default(const std::string& path) {
  RunConfig c = path.empty() ? RunConfig::from_json(json::object()) : load_run_config(path);
  return c;
}

data::Corpus load_data(const std::string& dir) {
  if (!fs::is_directory(dir)) fail(ErrorKind::kIo, "data directory '" + dir + "' does not exist");
  return data::load_corpus(dir);
}

void write_run(const fs::path& out, const TrainResult& res) {
  fs::create_directories(out);
  save_checkpoint((out / "model.ckpt").string(), model_checkpoint(res.model));
  write_text(out / "report.json", res.report.to_json().dump(2) + "\n");
  write_text(out / "curves.csv", curves_csv(res.report));
  write_text(out / "losses.csv", losses_csv(res.report));
  // Wall-clock lives beside the report so the report itself stays reproducible.
  write_text(out / "timing.json",
             json{{"wall_clock_seconds", res.report.wall_clock_seconds}}.dump(2) + "\n");
}

json strip_seed(json j) {
  j.erase("seed");
  return j;
}

TeacherSet load_teachers(const fs::path& dir, const ModelConfig& student) {
  if (!fs::is_directory(dir))
    fail(ErrorKind::kMissingTeacher, "teacher directory '" + dir.string() + "' does not exist");
  TeacherSet set;
  for (Task t : supported_tasks(student)) {
    const fs::path sub = dir / task_name(t);
    if (!fs::exists(sub / "model.ckpt") || !fs::exists(sub / "report.json"))
      fail(ErrorKind::kMissingTeacher,
           "no teacher for " + std::string(task_name(t)) + " under '" + dir.string() + "'");
    auto model = std::make_unique<FameModel>(
        model_from_checkpoint(load_checkpoint((sub / "model.ckpt").string())));
    if (strip_seed(model->config().to_json()) != strip_seed(student.to_json()))
      fail(ErrorKind::kInvalidArgument,
           "teacher " + std::string(task_name(t)) + " has a different architecture");
    if (!model->frozen()) model->freeze();
    RunReport rep = RunReport::from_json(read_json(sub / "report.json"));
    set.val_mu[t] = metrics::task_means(rep.val).at(t);
    set.test_mu[t] = metrics::task_means(rep.test).at(t);
    set.models[task_index(t)] = std::move(model);
    set.reports[task_index(t)] = std::move(rep);
  }
  return set;
}

std::vector<Task> parse_tasks(const std::string& list) {
  std::vector<Task> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(parse_task(item));
  return out;
}

struct CheckpointFlags {
  std::int64_t every = 0;
  std::int64_t stop_after = 0;
  bool resume = false;
  bool verbose = false;

  void add(CLI::App* cmd) {
    cmd->add_option("--checkpoint-every", every, "Write out/state.ckpt every N iterations");
    cmd->add_option("--stop-after", stop_after, "Stop after N iterations, saving state");
    cmd->add_flag("--resume", resume, "Resume from out/state.ckpt");
    cmd->add_flag("-v,--verbose", verbose, "Print validation progress");
  }

  TrainHooks hooks(const fs::path& out) const {
    TrainHooks h;
    h.verbose = verbose;
    if (every > 0 || stop_after > 0 || resume) h.checkpoint_path = (out / "state.ckpt").string();
    h.checkpoint_every = every;
    h.stop_after = stop_after;
    if (resume) {
      if (!fs::exists(out / "state.ckpt"))
        fail(ErrorKind::kIo, "nothing to resume: '" + (out / "state.ckpt").string() + "'");
      h.resume_from = (out / "state.ckpt").string();
    }
    return h;
  }
};

int finish_run(const fs::path& out, const TrainResult& res) {
  if (!res.finished) {
    std::cout << "stopped; state saved to " << (out / "state.ckpt").string() << "\n";
    return 0;
  }
  write_run(out, res);
  std::error_code ec;
  fs::remove(out / "state.ckpt", ec);
  std::cout << "wrote " << out.string() << "\n";
  return 0;
}

// ---- commands ----------------------------------------------------------------

int cmd_gen_data(const std::string& config, std::optional<std::uint64_t> seed,
                 std::optional<std::size_t> products, const std::string& out) {
  RunConfig c = config_or_default(config);
  const auto corpus = data::build_corpus(seed.value_or(c.data.seed),
                                         products.value_or(c.data.products), c.data.sizes);
  data::save_corpus(corpus, out);
  std::cout << "wrote " << out << "\n";
  return 0;
}

int cmd_train_teacher(const std::string& task, const std::string& data_dir,
                      const std::string& config, const fs::path& out,
                      const CheckpointFlags& ck) {
  const Task t = parse_task(task);
  const RunConfig c = config_or_default(config);
  const auto corpus = load_data(data_dir);
  const auto hooks = ck.hooks(out);
  if (!hooks.checkpoint_path.empty()) fs::create_directories(out);
  return finish_run(out, train_teacher(t, c.model, c.train, corpus, hooks));
}

int cmd_train_mtl(const std::string& data_dir, const std::string& config,
                  const std::optional<std::string>& strategy,
                  const std::optional<std::string>& grad_method, bool distill,
                  const std::string& teachers_dir, const fs::path& out,
                  const CheckpointFlags& ck) {
  RunConfig c = config_or_default(config);
  if (strategy) c.train.strategy = parse_strategy(*strategy);
  if (grad_method) c.train.grad_method = parse_grad_method(*grad_method);
  if (distill) c.train.distill = true;
  const bool need_teachers = c.train.distill || c.train.grad_method == GradMethod::kIas;
  if (need_teachers && teachers_dir.empty())
    fail(ErrorKind::kMissingTeacher, "--teachers is required with distillation or IAS");
  const auto corpus = load_data(data_dir);
  std::optional<TeacherSet> teachers;
  if (!teachers_dir.empty()) teachers = load_teachers(teachers_dir, c.model);
  const auto hooks = ck.hooks(out);
  if (!hooks.checkpoint_path.empty()) fs::create_directories(out);
  return finish_run(out,
                    train_mtl(c.model, c.train, corpus, teachers ? &*teachers : nullptr, hooks));
}

int cmd_eval(const std::string& checkpoint, const std::string& data_dir, const std::string& tasks,
             const std::string& split, const std::string& protocol, std::uint64_t seed,
             const std::string& out, const std::string& csv) {
  if (protocol != "full" && protocol != "random100" && protocol != "both")
    fail(ErrorKind::kInvalidArgument, "--protocol must be full, random100 or both");
  if (split != "val" && split != "test")
    fail(ErrorKind::kInvalidArgument, "--split must be val or test");
  const FameModel model = model_from_checkpoint(load_checkpoint(checkpoint));
  const auto corpus = load_data(data_dir);
  const auto task_list = tasks.empty() ? supported_tasks(model.config()) : parse_tasks(tasks);
  EvalOptions eo;
  eo.seed = seed;
  eo.xmr_random100 = protocol != "full";
  const auto res = evaluate(model, corpus, split == "val" ? corpus.val : corpus.test, task_list, eo);

  json rows = json::array();
  std::string table = "task,protocol,metric,value\n";
  auto emit = [&](const std::string& task, const std::string& proto, const std::string& metric,
                  double v) {
    rows.push_back({{"task", task}, {"protocol", proto}, {"metric", metric}, {"value", v}});
    std::ostringstream os;
    os.precision(17);
    os << task << "," << proto << "," << metric << "," << v << "\n";
    table += os.str();
  };
  for (const auto& [task, m] : res.table) {
    const bool retrieval = task == Task::kXmr || task == Task::kTgir;
    for (const auto& [name, v] : m.values) {
      if (task == Task::kXmr && protocol == "random100") continue;
      emit(task_name(task), retrieval ? "full" : "-", name, v);
    }
  }
  json extras = json::object();
  const std::string prefix = "xmr.random100.";
  for (const auto& [k, v] : res.extras) {
    if (k.rfind(prefix, 0) == 0 && k != prefix + "pool")
      emit("xmr", "random100", k.substr(prefix.size()), v);
    else
      extras[k] = v;
  }
  json mu = json::object();
  if (protocol != "random100")
    for (const auto& [task, v] : metrics::task_means(res.table)) mu[task_name(task)] = v;
  const json doc = {{"checkpoint", checkpoint}, {"split", split}, {"protocol", protocol},
                    {"rows", rows}, {"mu", mu}, {"extras", extras}};
  if (out.empty())
    std::cout << table;
  else
    write_text(out, doc.dump(2) + "\n");
  if (!csv.empty()) write_text(csv, table);
  return 0;
}

int cmd_ablate(const std::string& group, const std::string& config, const std::string& seeds,
               const fs::path& out, bool verbose) {
  const RunConfig c = config_or_default(config);
  AblationOptions opts;
  opts.seeds = c.seeds;
  if (!seeds.empty()) {
    opts.seeds.clear();
    std::stringstream ss(seeds);
    std::string item;
    while (std::getline(ss, item, ',')) {
      try {
        opts.seeds.push_back(std::stoull(item));
      } catch (const std::exception&) {
        fail(ErrorKind::kInvalidArgument, "--seeds: bad seed '" + item + "'");
      }
    }
  }
  opts.n_products = c.data.products;
  opts.sizes = c.data.sizes;
  opts.verbose = verbose;
  ablation_rows(group);  // reject unknown groups before any training
  const auto table = run_ablation(group, c.model, c.train, opts);
  write_text(out / "ablation.json", table.to_json().dump(2) + "\n");
  write_text(out / "ablation.csv", table.to_csv());
  std::cout << table.to_csv();
  return 0;
}

int cmd_report(const std::vector<std::string>& runs, const fs::path& out) {
  std::map<Task, std::vector<Series>> panels;
  std::string merged = "run,iteration,task,metric,value\n";
  std::string summary = "run,tag,task,test_mu\n";
  for (const auto& dir : runs) {
    const RunReport rep = RunReport::from_json(read_json(fs::path(dir) / "report.json"));
    const std::string name = fs::path(dir).filename().string();
    std::istringstream curves(curves_csv(rep));
    std::string line;
    std::getline(curves, line);
    while (std::getline(curves, line)) merged += name + "," + line + "\n";
    for (const auto& [task, pts] : rep.curves) {
      Series s;
      s.label = name;
      for (const auto& p : pts) s.points.emplace_back(static_cast<double>(p.iteration), p.mu);
      panels[task].push_back(std::move(s));
    }
    for (const auto& [task, mu] : metrics::task_means(rep.test)) {
      std::ostringstream os;
      os.precision(17);
      os << name << ",\"" << rep.tag << "\"," << task_name(task) << "," << mu << "\n";
      summary += os.str();
    }
  }
  write_text(out / "curves.csv", merged);
  write_text(out / "summary.csv", summary);
  for (const auto& [task, series] : panels) {
    write_text(out / (std::string("curve_") + task_name(task) + ".svg"),
               line_plot_svg(std::string("validation ") + task_name(task), "iteration",
                             "mean metric", series));
  }
  std::cout << "wrote " << panels.size() << " panels to " << out.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fashionmt: multi-task fashion vision-language experiments on a synthetic corpus"};
  app.require_subcommand(1);

  std::string config, out, data_dir, task, teachers, tasks, split = "test", protocol = "full",
                                                        group, seeds, checkpoint, csv;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> products;
  std::optional<std::string> strategy, grad_method;
  std::uint64_t eval_seed = 0;
  bool distill = false, verbose = false;
  std::vector<std::string> runs;
  CheckpointFlags ck_teacher, ck_mtl;

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic catalog and task datasets");
  gen->add_option("--config", config, "Run config (JSON)");
  gen->add_option("--seed", seed, "Data seed (overrides config)");
  gen->add_option("--products", products, "Catalog size (overrides config)");
  gen->add_option("--out", out, "Output directory")->required();

  auto* tt = app.add_subcommand("train-teacher", "Train a single-task teacher");
  tt->add_option("--task", task, "xmr, tgir, scr or fic")->required();
  tt->add_option("--data", data_dir, "Data directory from gen-data")->required();
  tt->add_option("--config", config, "Run config (JSON)");
  tt->add_option("--out", out, "Output directory")->required();
  ck_teacher.add(tt);

  auto* tm = app.add_subcommand("train-mtl", "Train the multi-task model");
  tm->add_option("--data", data_dir, "Data directory from gen-data")->required();
  tm->add_option("--config", config, "Run config (JSON)");
  tm->add_option("--strategy", strategy, "size_proportional, uniform or round_robin");
  tm->add_option("--grad-method", grad_method, "none, ias or imtlg");
  tm->add_flag("--distill", distill, "Multi-teacher distillation");
  tm->add_option("--teachers", teachers, "Directory holding <task>/model.ckpt teachers");
  tm->add_option("--out", out, "Output directory")->required();
  ck_mtl.add(tm);

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  ev->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  ev->add_option("--data", data_dir, "Data directory from gen-data")->required();
  ev->add_option("--tasks", tasks, "Comma-separated tasks (default: all supported)");
  ev->add_option("--split", split, "val or test");
  ev->add_option("--protocol", protocol, "full, random100 or both");
  ev->add_option("--seed", eval_seed, "Seed of the random100 pools");
  ev->add_option("--out", out, "Metric JSON (default: CSV to stdout)");
  ev->add_option("--csv", csv, "Also write the CSV table here");

  auto* ab = app.add_subcommand("ablate", "Run an ablation group (I, II, III or IV)");
  ab->add_option("--group", group, "I, II, III or IV")->required();
  ab->add_option("--config", config, "Run config (JSON)");
  ab->add_option("--seeds", seeds, "Comma-separated seeds (overrides config)");
  ab->add_option("--out", out, "Output directory")->required();
  ab->add_flag("-v,--verbose", verbose, "Print validation progress");

  auto* rp = app.add_subcommand("report", "Merge run reports into CSV and SVG curves");
  rp->add_option("runs", runs, "Run directories holding report.json")->required();
  rp->add_option("--out", out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << e.what() << "\n";
    return kUsageExit;
  }

  try {
    if (*gen) return cmd_gen_data(config, seed, products, out);
    if (*tt) return cmd_train_teacher(task, data_dir, config, out, ck_teacher);
    if (*tm)
      return cmd_train_mtl(data_dir, config, strategy, grad_method, distill, teachers, out, ck_mtl);
    if (*ev) return cmd_eval(checkpoint, data_dir, tasks, split, protocol, eval_seed, out, csv);
    if (*ab) return cmd_ablate(group, config, seeds, out, verbose);
    if (*rp) return cmd_report(runs, out);
  } catch (const Error& e) {
    std::cerr << "error: " << error_kind_name(e.kind()) << ": " << e.what() << "\n";
    return error_exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return kInternalExit;
  }
  return kUsageExit;
}
