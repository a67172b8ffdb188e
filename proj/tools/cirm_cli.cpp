// Command-line front door. Artifacts go to --out (default $CIRM_OUT or
// ./cirm-out); progress goes to stderr.

#include <atomic>
#include <cmath>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "cirm/error.hpp"
#include "cirm/harness.hpp"
#include "cirm/intervene.hpp"
#include "cirm/models.hpp"
#include "cirm/realign_train.hpp"
#include "cirm/realigner.hpp"
#include "cirm/service.hpp"
#include "cirm/world.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cirm;

namespace {

void progress(const std::string& line) { std::cerr << "[cirm] " << line << std::endl; }

struct DataOptions {
  std::string world = "small";
  std::string data_dir;
  std::size_t n_train = 6000;
  std::size_t n_val = 1000;
  std::size_t n_test = 1000;

  void add(CLI::App* app) {
    app->add_option("--world", world, "Preset name or world file")->capture_default_str();
    app->add_option("--data-dir", data_dir, "Directory with train/val/test CSVs (overrides sampling)");
    app->add_option("--n-train", n_train)->capture_default_str();
    app->add_option("--n-val", n_val)->capture_default_str();
    app->add_option("--n-test", n_test)->capture_default_str();
  }

  WorldEntry resolve(std::uint64_t seed) const { return resolve_world(world, seed); }

  DatasetSplits splits(const GenerativeWorld& w, std::uint64_t seed) const {
    if (data_dir.empty()) return sample_splits(w, n_train, n_val, n_test, seed);
    const fs::path dir(data_dir);
    return {read_dataset_csv(dir / "train.csv"), read_dataset_csv(dir / "val.csv"),
            read_dataset_csv(dir / "test.csv")};
  }
};

struct TrainOptions {
  TrainConfig cfg;
  void add(CLI::App* app, const std::string& prefix = "") {
    app->add_option("--" + prefix + "epochs", cfg.max_epochs)->capture_default_str();
    app->add_option("--" + prefix + "batch-size", cfg.batch_size)->capture_default_str();
    app->add_option("--" + prefix + "lr", cfg.lr)->capture_default_str();
    app->add_option("--" + prefix + "weight-decay", cfg.weight_decay)->capture_default_str();
    app->add_option("--" + prefix + "patience", cfg.patience)->capture_default_str();
  }
};

struct RealignerOptions {
  std::string arch = "feedforward";
  std::string input_mode = "original";
  std::size_t layers = 2;
  std::size_t width = 0;
  double width_factor = 2.0;
  std::string policy = "ucp";
  bool no_residual = false;
  bool include_step0 = false;
  TrainOptions train;

  RealignerOptions() { train.cfg.lr = 2e-3; }

  void add(CLI::App* app, const std::string& prefix = "") {
    app->add_option("--arch", arch, "feedforward | recurrent | identity")->capture_default_str();
    app->add_option("--input-mode", input_mode, "original | previous_output")->capture_default_str();
    app->add_option("--layers", layers)->capture_default_str();
    app->add_option("--width", width, "Hidden width; 0 uses --width-factor * k");
    app->add_option("--width-factor", width_factor)->capture_default_str();
    app->add_option("--train-policy", policy, "ucp | ucp_static | random")->capture_default_str();
    app->add_flag("--no-residual", no_residual);
    app->add_flag("--include-step0", include_step0);
    train.add(app, prefix);
  }

  RealignerConfig config(std::size_t k, std::uint64_t seed) const {
    RealignerConfig c;
    c.arch = realigner_arch_from_string(arch);
    c.input_mode = realigner_input_from_string(input_mode);
    c.hidden_layers = layers;
    c.hidden_width = width > 0 ? width
                               : std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(
                                                              width_factor * static_cast<double>(k))));
    c.residual = !no_residual;
    c.include_step0 = include_step0;
    c.training_policy = parse_policy(policy, seed);
    c.train = train.cfg;
    return c;
  }

  static PolicyKind parse_policy(const std::string& s, std::uint64_t seed) {
    if (s == "ucp") return PolicyKind::ucp(PolicySource::updated);
    if (s == "ucp_static") return PolicyKind::ucp(PolicySource::original);
    if (s == "random") return PolicyKind::random(seed);
    throw ValueError("unknown policy '" + s + "' (ucp, ucp_static, random)");
  }
};

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      out.push_back(std::stoull(item));
    } catch (const std::exception&) {
      throw ValueError("bad seed '" + item + "'");
    }
  }
  if (out.empty()) throw ValueError("no seeds given");
  return out;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::vector<ModelKind> parse_kinds(const std::vector<std::string>& names) {
  std::vector<ModelKind> out;
  for (const auto& n : names) out.push_back(model_kind_from_string(n));
  return out;
}

// ----------------------------------------------------------------------------
// SVG export of curves.csv

struct CurvePoint {
  std::size_t t;
  double value;
};

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

void render_svg(const fs::path& curves_csv, const std::string& metric, const fs::path& out_path) {
  std::ifstream in(curves_csv);
  if (!in) throw IoError("cannot read " + curves_csv.string());
  std::string line;
  std::getline(in, line);
  const auto header = split_csv(line);
  auto col = [&](const std::string& name) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw IoError(curves_csv.string() + " has no column " + name);
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t c_label = col("label"), c_rea = col("realigned"), c_metric = col("metric"),
                    c_t = col("t"), c_value = col("value");
  // series -> t -> values across seeds
  std::map<std::string, std::map<std::size_t, std::vector<double>>> series;
  while (std::getline(in, line)) {
    const auto cells = split_csv(line);
    if (cells.size() < header.size() || cells[c_metric] != metric) continue;
    const std::string name = cells[c_label] + (cells[c_rea] == "1" ? " (realigned)" : "");
    series[name][std::stoul(cells[c_t])].push_back(std::stod(cells[c_value]));
  }
  if (series.empty()) throw ValueError("no '" + metric + "' rows in " + curves_csv.string());
  double y_max = 0.0;
  std::size_t t_max = 1;
  std::map<std::string, std::vector<CurvePoint>> mean;
  for (const auto& [name, by_t] : series) {
    for (const auto& [t, vs] : by_t) {
      double m = 0.0;
      for (double v : vs) m += v;
      m /= static_cast<double>(vs.size());
      mean[name].push_back({t, m});
      y_max = std::max(y_max, m);
      t_max = std::max(t_max, t);
    }
  }
  if (y_max <= 0.0) y_max = 1.0;
  const double W = 640, H = 400, L = 60, R = 200, T = 20, B = 40;
  const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                           "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
  std::ofstream out(out_path);
  if (!out) throw IoError("cannot write " + out_path.string());
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  const double pw = W - L - R, ph = H - T - B;
  out << "<line x1=\"" << L << "\" y1=\"" << T + ph << "\" x2=\"" << L + pw << "\" y2=\"" << T + ph
      << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << T + ph
      << "\" stroke=\"black\"/>\n";
  out << "<text x=\"" << L + pw / 2 << "\" y=\"" << H - 8 << "\" text-anchor=\"middle\" "
      << "font-size=\"12\">interventions t</text>\n";
  out << "<text x=\"12\" y=\"" << T + ph / 2 << "\" font-size=\"12\" transform=\"rotate(-90 12 "
      << T + ph / 2 << ")\" text-anchor=\"middle\">" << metric << "</text>\n";
  out << "<text x=\"" << L - 4 << "\" y=\"" << T + 4 << "\" font-size=\"10\" text-anchor=\"end\">"
      << y_max << "</text>\n";
  out << "<text x=\"" << L + pw << "\" y=\"" << T + ph + 14 << "\" font-size=\"10\" "
      << "text-anchor=\"middle\">" << t_max << "</text>\n";
  std::size_t i = 0;
  for (const auto& [name, pts] : mean) {
    const char* color = palette[i % 8];
    const bool dashed = name.find("(realigned)") == std::string::npos;
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\""
        << (dashed ? " stroke-dasharray=\"4 3\"" : "") << " points=\"";
    for (const auto& p : pts) {
      out << L + pw * static_cast<double>(p.t) / static_cast<double>(t_max) << ','
          << T + ph * (1.0 - p.value / y_max) << ' ';
    }
    out << "\"/>\n";
    const double ly = T + 14.0 * static_cast<double>(i + 1);
    out << "<line x1=\"" << L + pw + 10 << "\" y1=\"" << ly - 4 << "\" x2=\"" << L + pw + 30
        << "\" y2=\"" << ly - 4 << "\" stroke=\"" << color << "\""
        << (dashed ? " stroke-dasharray=\"4 3\"" : "") << "/>\n";
    out << "<text x=\"" << L + pw + 34 << "\" y=\"" << ly << "\" font-size=\"11\">" << name
        << "</text>\n";
    ++i;
  }
  out << "</svg>\n";
}

std::atomic<HttpService*> g_service{nullptr};

void on_signal(int) {
  if (auto* s = g_service.load()) s->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cirm: concept interventions with a trainable realigner"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "TOML config; keys mirror the long flag names");
  std::string out_dir = "cirm-out";
  std::uint64_t seed = 1;
  app.add_option("--out", out_dir, "Output directory")->envname("CIRM_OUT")->capture_default_str();
  app.add_option("--seed", seed)->capture_default_str();

  // gen-world
  auto* gen_world = app.add_subcommand("gen-world", "Write a world file from a preset or spec");
  std::string preset = "small", spec_path, world_name = "world.json";
  gen_world->add_option("--preset", preset, "small | medium | grouped")->capture_default_str();
  gen_world->add_option("--spec", spec_path, "World spec JSON (overrides --preset)");
  gen_world->add_option("--name", world_name, "Output file name")->capture_default_str();

  // gen-data
  auto* gen_data = app.add_subcommand("gen-data", "Sample train/val/test CSVs from a world");
  DataOptions gd;
  gd.add(gen_data);

  // train
  auto* train = app.add_subcommand("train", "Train a concept model");
  DataOptions td;
  td.add(train);
  std::string kind = "sequential";
  TrainOptions tt;
  double gamma = 1.1, lambda_conc = 1.0, lambda_roll = 0.0;
  std::size_t embedding_width = 8;
  train->add_option("--kind", kind, "sequential | independent | joint | cem | intcem | intcem_rea")
      ->capture_default_str();
  train->add_option("--embedding-width", embedding_width)->capture_default_str();
  train->add_option("--gamma", gamma)->capture_default_str();
  train->add_option("--lambda-conc", lambda_conc)->capture_default_str();
  train->add_option("--lambda-roll", lambda_roll)->capture_default_str();
  tt.add(train);
  RealignerOptions tr;  // realigner settings for intcem_rea
  tr.add(train, "realigner-");

  // train-realigner
  auto* train_rea = app.add_subcommand("train-realigner", "Train a posthoc realigner on a frozen model");
  DataOptions rd;
  rd.add(train_rea);
  std::string model_path;
  RealignerOptions ro;
  bool grid = false;
  std::vector<double> grid_lrs{1e-3, 2e-3, 5e-3};
  train_rea->add_option("--model", model_path, "Model manifest")->required();
  train_rea->add_flag("--grid", grid, "Search layers x width x lr on validation loss");
  train_rea->add_option("--grid-lrs", grid_lrs)->delimiter(',');
  ro.add(train_rea);

  // simulate
  auto* simulate = app.add_subcommand("simulate", "Run one intervention trajectory");
  DataOptions sd;
  sd.add(simulate);
  std::string sim_model, sim_realigner, sim_policy = "ucp";
  std::size_t sim_T = 0, sample_index = 0;
  bool sim_T_set = false;
  simulate->add_option("--model", sim_model)->required();
  simulate->add_option("--realigner", sim_realigner);
  simulate->add_option("--policy", sim_policy, "ucp | ucp_static | random")->capture_default_str();
  simulate->add_option("--T", sim_T, "Interventions (default: every unit)")
      ->each([&](const std::string&) { sim_T_set = true; });
  simulate->add_option("--sample-index", sample_index, "Index into the test split")->capture_default_str();

  // benchmark
  auto* bench = app.add_subcommand("benchmark", "Baseline vs realigned AUC table");
  std::string suite = "table1", seeds_str = "1,2,3";
  std::vector<std::string> bench_worlds{"medium"};
  std::vector<std::string> bench_kinds{"sequential", "independent", "joint", "cem"};
  std::size_t jobs = 1;
  ExperimentConfig bcfg = default_experiment_config();
  RealignerOptions bro;
  bench->add_option("--suite", suite, "Suite name (table1)")->capture_default_str();
  bench->add_option("--world", bench_worlds, "Preset names or world files")->delimiter(',');
  bench->add_option("--kinds", bench_kinds)->delimiter(',');
  bench->add_option("--seeds", seeds_str)->capture_default_str();
  bench->add_option("--jobs", jobs)->capture_default_str();
  bench->add_option("--n-train", bcfg.n_train)->capture_default_str();
  bench->add_option("--n-val", bcfg.n_val)->capture_default_str();
  bench->add_option("--n-test", bcfg.n_test)->capture_default_str();
  bro.add(bench, "realigner-");

  // ablate
  auto* ablate = app.add_subcommand("ablate", "Run one ablation");
  std::string ab_kind = "ucp_vs_random", ab_world = "medium", ab_seeds = "1,2,3", ab_base = "sequential";
  ExperimentConfig acfg = default_experiment_config();
  RealignerOptions aro;
  ablate->add_option("--kind", ab_kind,
                     "architectures | policy_transfer | static_vs_updated | ucp_vs_random")
      ->capture_default_str();
  ablate->add_option("--world", ab_world)->capture_default_str();
  ablate->add_option("--seeds", ab_seeds)->capture_default_str();
  ablate->add_option("--base", ab_base, "Base model kind")->capture_default_str();
  ablate->add_option("--jobs", acfg.jobs)->capture_default_str();
  ablate->add_option("--n-train", acfg.n_train)->capture_default_str();
  ablate->add_option("--n-val", acfg.n_val)->capture_default_str();
  ablate->add_option("--n-test", acfg.n_test)->capture_default_str();
  aro.add(ablate, "realigner-");

  // serve
  auto* serve = app.add_subcommand("serve", "HTTP session service");
  DataOptions vd;
  vd.add(serve);
  std::string serve_model, serve_realigner, serve_id, host = "127.0.0.1", static_dir, snapshot;
  int port = 8080;
  long ttl = 3600;
  bool debug = false;
  serve->add_option("--model", serve_model)->required();
  serve->add_option("--realigner", serve_realigner);
  serve->add_option("--model-id", serve_id, "Id in /models (default: manifest stem)");
  serve->add_option("--host", host)->capture_default_str();
  serve->add_option("--port", port)->capture_default_str();
  serve->add_option("--ttl", ttl, "Session TTL in seconds")->capture_default_str();
  serve->add_option("--snapshot", snapshot, "Session snapshot file name inside --out");
  serve->add_option("--static", static_dir, "Directory of console assets mounted at /");
  serve->add_flag("--debug", debug, "Expose ground truth in payloads");

  // export
  auto* exp = app.add_subcommand("export", "Render curves.csv to SVG plots");
  std::string curves_path;
  std::vector<std::string> metrics{"concept_bce", "accuracy"};
  exp->add_option("--curves", curves_path)->required();
  exp->add_option("--metric", metrics)->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    const fs::path out(out_dir);
    fs::create_directories(out);

    if (*gen_world) {
      GenerativeWorld w;
      if (!spec_path.empty()) {
        std::ifstream in(spec_path);
        if (!in) throw IoError("cannot read " + spec_path);
        w = build_world(world_spec_from_json(json::parse(in)));
      } else {
        w = build_world(preset_spec(preset, seed));
      }
      save_world(out / world_name, w);
      progress("wrote " + (out / world_name).string());
    } else if (*gen_data) {
      const auto entry = gd.resolve(seed);
      const auto splits = gd.splits(entry.world, seed);
      const auto& w = entry.world;
      write_dataset_csv(out / "train.csv", splits.train, w.input_dim, w.num_concepts);
      write_dataset_csv(out / "val.csv", splits.val, w.input_dim, w.num_concepts);
      write_dataset_csv(out / "test.csv", splits.test, w.input_dim, w.num_concepts);
      progress("wrote train/val/test CSVs to " + out.string());
    } else if (*train) {
      const auto entry = td.resolve(seed);
      const auto& w = entry.world;
      const auto splits = td.splits(w, seed);
      const auto units = SelectionUnits::from_groups(w.num_concepts, w.groups);
      TrainHistory history;
      std::unique_ptr<ConceptModel> model;
      if (kind == "intcem_rea") {
        CemConfig cfg;
        cfg.input_dim = w.input_dim;
        cfg.num_concepts = w.num_concepts;
        cfg.num_classes = w.num_classes;
        cfg.embedding_width = embedding_width;
        IntCemConfig ic{gamma, lambda_conc, lambda_roll, LengthDistribution::uniform, 0};
        progress("training intcem with a realigner");
        auto res = train_intcem_rea(splits.train, splits.val, cfg, tr.config(w.num_concepts, seed),
                                    ic, units, tt.cfg, seed);
        save_realigner(out / "realigner.json", res.realigner, res.model.checksum());
        history = res.history;
        model = res.model.clone();
      } else {
        const ModelKind mk = model_kind_from_string(kind);
        if (is_cbm(mk)) {
          CbmConfig cfg{w.input_dim, w.num_concepts, w.num_classes, 0, 2,
                        cbm_scheme_from_string(kind), 1.0, {}};
          auto cbm = std::make_unique<CbmModel>(cfg);
          CbmTrainOptions opt;
          opt.train = tt.cfg;
          progress("training " + kind + " CBM");
          history = train_cbm(*cbm, splits.train, splits.val, opt, seed);
          model = std::move(cbm);
        } else {
          CemConfig cfg;
          cfg.input_dim = w.input_dim;
          cfg.num_concepts = w.num_concepts;
          cfg.num_classes = w.num_classes;
          cfg.embedding_width = embedding_width;
          cfg.policy_head = mk == ModelKind::intcem && lambda_roll > 0.0;
          auto cem = std::make_unique<CemModel>(cfg);
          progress("training " + kind);
          if (mk == ModelKind::cem) {
            history = train_cem(*cem, splits.train, splits.val, tt.cfg, seed);
          } else {
            IntCemConfig ic{gamma, lambda_conc, lambda_roll, LengthDistribution::uniform, 0};
            history = train_intcem(*cem, splits.train, splits.val, ic, units, tt.cfg, seed);
          }
          model = std::move(cem);
        }
      }
      const fs::path path = out / ("model-" + kind + ".json");
      save_model(path, *model);
      json h = json::array();
      for (const auto& e : history) {
        h.push_back({{"stage", e.stage}, {"epoch", e.epoch}, {"train_loss", e.train_loss},
                     {"val_loss", e.val_loss}, {"lr", e.lr}});
      }
      write_json(out / ("history-" + kind + ".json"), h);
      const json summary{{"model", path.string()},
                         {"test_accuracy", task_accuracy(*model, splits.test)},
                         {"test_concept_bce", concept_bce(*model, splits.test)}};
      std::cout << summary.dump(2) << '\n';
    } else if (*train_rea) {
      const auto entry = rd.resolve(seed);
      const auto& w = entry.world;
      const auto splits = rd.splits(w, seed);
      const auto units = SelectionUnits::from_groups(w.num_concepts, w.groups);
      auto model = load_model(model_path);
      model->freeze();
      const RealignerConfig cfg = ro.config(w.num_concepts, seed);
      const fs::path path = out / "realigner.json";
      if (grid) {
        progress("grid search over realigner layers, widths and learning rates");
        auto res = grid_search_realigner(*model, splits.train, splits.val, units, cfg, grid_lrs, seed);
        std::ofstream csv(out / "grid.csv");
        csv.precision(17);
        csv << "hidden_layers,hidden_width,lr,val_loss\n";
        for (const auto& r : res.rows) {
          csv << r.hidden_layers << ',' << r.hidden_width << ',' << r.lr << ',' << r.val_loss << '\n';
        }
        save_realigner(path, res.best.realigner, res.best.base_checksum);
        write_json(out / "realigner-config.json", to_json(res.best_config));
      } else {
        progress("training realigner");
        auto res = train_realigner_posthoc(*model, splits.train, splits.val, units, cfg, seed);
        save_realigner(path, res.realigner, res.base_checksum);
      }
      progress("wrote " + path.string());
    } else if (*simulate) {
      const auto entry = sd.resolve(seed);
      const auto& w = entry.world;
      const auto splits = sd.splits(w, seed);
      const auto units = SelectionUnits::from_groups(w.num_concepts, w.groups);
      auto model = load_model(sim_model);
      std::optional<Realigner> rea;
      if (!sim_realigner.empty()) {
        auto loaded = load_realigner(sim_realigner);
        if (loaded.base_checksum != model->checksum()) {
          throw StateError("realigner was trained on a different model");
        }
        rea = std::move(loaded.realigner);
      }
      if (sample_index >= splits.test.size()) {
        throw ValueError("sample index " + std::to_string(sample_index) + " out of range (" +
                         std::to_string(splits.test.size()) + " test samples)");
      }
      const std::size_t T = sim_T_set ? sim_T : units.size();
      const auto result = run_trajectory(*model, rea ? &*rea : nullptr,
                                         RealignerOptions::parse_policy(sim_policy, seed), T,
                                         splits.test[sample_index], units, sample_index);
      std::ofstream jl(out / "trajectory.jsonl");
      jl << to_jsonl(result);
      json steps = json::array();
      for (const auto& s : result.steps) steps.push_back(to_json(s));
      const json doc{{"sample_index", sample_index}, {"policy", sim_policy}, {"T", T}, {"steps", steps}};
      write_json(out / "trajectory.json", doc);
      std::cout << doc.dump() << '\n';
    } else if (*bench) {
      if (suite != "table1") throw ValueError("unknown suite '" + suite + "'");
      SuiteSpec spec;
      spec.worlds = bench_worlds;
      spec.kinds = parse_kinds(bench_kinds);
      spec.seeds = parse_seeds(seeds_str);
      spec.config = bcfg;
      spec.config.jobs = jobs;
      spec.config.cache_dir = out / "cache";
      spec.config.log = progress;
      spec.config.realigner = bro.config(0, seed);
      spec.config.realigner.hidden_width = bro.width;
      spec.config.realigner_width_factor = bro.width_factor;
      const auto result = run_benchmark(spec);
      write_auc_rows_csv(out / "auc_rows.csv", result.rows);
      write_table_csv(out / "auc_table.csv", result.table);
      write_curves_csv(out / "curves.csv", result.curves);
      for (const auto& e : result.errors) {
        progress("cell failed: " + e.world + "/" + e.label + " seed " + std::to_string(e.seed) +
                 ": " + e.message);
      }
      progress("wrote auc_table.csv (" + std::to_string(result.table.size()) + " rows)");
      if (!result.errors.empty()) return 1;
    } else if (*ablate) {
      AblationSpec spec;
      spec.kind = ablation_kind_from_string(ab_kind);
      spec.world = ab_world;
      spec.seeds = parse_seeds(ab_seeds);
      spec.base = model_kind_from_string(ab_base);
      spec.config = acfg;
      spec.config.cache_dir = out / "cache";
      spec.config.log = progress;
      spec.config.realigner = aro.config(0, seed);
      spec.config.realigner.hidden_width = aro.width;
      spec.config.realigner_width_factor = aro.width_factor;
      const auto result = run_ablation(spec);
      write_ablation_csv(out / ("ablation-" + ab_kind + ".csv"), result);
      write_table_csv(out / ("ablation-" + ab_kind + "-table.csv"), result.table);
      write_curves_csv(out / ("ablation-" + ab_kind + "-curves.csv"), result.curves);
      for (const auto& e : result.errors) {
        progress("arm failed: " + e.label + " seed " + std::to_string(e.seed) + ": " + e.message);
      }
      if (!result.errors.empty()) return 1;
    } else if (*serve) {
      const auto entry = vd.resolve(seed);
      const auto splits = vd.splits(entry.world, seed);
      std::shared_ptr<const ConceptModel> model = load_model(serve_model);
      std::shared_ptr<const Realigner> rea;
      if (!serve_realigner.empty()) {
        auto loaded = load_realigner(serve_realigner);
        if (loaded.base_checksum != model->checksum()) {
          throw StateError("realigner was trained on a different model");
        }
        rea = std::make_shared<const Realigner>(std::move(loaded.realigner));
      }
      const std::string id = serve_id.empty() ? fs::path(serve_model).stem().string() : serve_id;
      ServiceConfig cfg;
      cfg.ttl = std::chrono::seconds(ttl);
      cfg.debug = debug;
      if (!snapshot.empty()) cfg.snapshot_path = out / snapshot;
      std::vector<ServedModel> models;
      models.push_back(make_served_model(id, model, rea, &entry.world, splits.test));
      SessionManager manager(std::move(models), cfg);
      HttpService http(manager, static_dir.empty() ? std::nullopt
                                                   : std::optional<fs::path>(static_dir));
      g_service = &http;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      progress("serving model '" + id + "' on http://" + host + ":" + std::to_string(port));
      http.listen(host, port);
      g_service = nullptr;
    } else if (*exp) {
      for (const auto& m : metrics) {
        const fs::path path = out / ("curves-" + m + ".svg");
        render_svg(curves_path, m, path);
        progress("wrote " + path.string());
      }
    }
  } catch (const std::exception& e) {
    const char* type = dynamic_cast<const ShapeError*>(&e)   ? "ShapeError"
                       : dynamic_cast<const ValueError*>(&e) ? "ValueError"
                       : dynamic_cast<const StateError*>(&e) ? "StateError"
                       : dynamic_cast<const IoError*>(&e)    ? "IoError"
                                                             : "Error";
    std::cerr << json{{"error", type}, {"message", e.what()}}.dump() << '\n';
    return 1;
  }
  return 0;
}
