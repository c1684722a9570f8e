// driftfb command line: simulation experiment, plot data, corpus generation,
// presets and the HTTP service.

#include "driftfb/http_server.hpp"

#include <CLI11.hpp>

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include "driftfb/corpus.hpp"
#include "driftfb/model.hpp"
#include "driftfb/simharness.hpp"
#include "driftfb/synthetic.hpp"

namespace fs = std::filesystem;
using namespace driftfb;

namespace {

struct DatasetArgs {
  std::string path;
  std::size_t per_group = 100;
  std::size_t groups = 20;
  double max_df = 0.2;
  double min_df = 0.04;
  std::string cache;
  std::uint64_t synthetic_seed = 20;

  void add(CLI::App* app) {
    app->add_option("--dataset-path", path, "20-Newsgroups directory (default: generated synthetic corpus)");
    app->add_option("--per-group", per_group, "documents per group")->capture_default_str();
    app->add_option("--groups", groups, "number of groups")->capture_default_str();
    app->add_option("--max-df", max_df, "maximum document frequency")->capture_default_str();
    app->add_option("--min-df", min_df, "minimum document frequency")->capture_default_str();
    app->add_option("--corpus-cache", cache, "cache file for the processed corpus");
    app->add_option("--synthetic-seed", synthetic_seed, "seed of the generated corpus")->capture_default_str();
  }

  Corpus load(std::ostream& log) const {
    fs::path root = path;
    if (root.empty()) {
      root = fs::temp_directory_path() / ("driftfb-synthetic-" + std::to_string(synthetic_seed) + "-" +
                                          std::to_string(per_group));
      if (!fs::exists(root / "talk.religion.misc")) {
        synthetic::Settings s;
        s.seed = synthetic_seed;
        s.per_group = per_group;
        synthetic::write_newsgroups(root, s);
      }
      log << "using synthetic corpus at " << root.string() << '\n';
    }
    const auto raw = load_newsgroups(root, per_group, groups);
    const CorpusSettings settings{max_df, min_df};
    Corpus c = cache.empty() ? build_corpus(raw, settings) : build_corpus_cached(raw, settings, cache);
    log << c.size() << " documents, " << c.dim() << " terms\n";
    return c;
  }
};

template <class T, class F>
std::vector<T> expand(const std::string& arg, const std::vector<std::string>& all, F parse) {
  std::vector<T> out;
  if (arg == "all") {
    for (const auto& a : all) out.push_back(parse(a));
  } else {
    out.push_back(parse(arg));
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"drift-aware relevance feedback engine"};
  app.require_subcommand(1);
  app.set_config("--config", "", "read options from a TOML/INI file");

  // simulate
  auto* simulate = app.add_subcommand("simulate", "run the simulated-user experiment");
  DatasetArgs sim_data;
  sim_data.add(simulate);
  std::string scenario = "all", model = "all", out_path = "results.csv", preset = "simulation";
  sim::SimConfig cfg;
  bool runtime_serial = false;
  std::size_t threads = std::max(1u, std::thread::hardware_concurrency());
  simulate->add_option("--scenario", scenario, "A|B|C|D|all")->capture_default_str();
  simulate->add_option("--model", model, "ard|lg|oracle|all")->capture_default_str();
  simulate->add_option("--sessions", cfg.sessions, "sessions per cell")->capture_default_str();
  simulate->add_option("--steps", cfg.steps, "feedback steps per session")->capture_default_str();
  simulate->add_option("--list-size", cfg.list_size, "length of the scored list")->capture_default_str();
  simulate->add_option("--seed", cfg.rng_seed, "experiment seed")->capture_default_str();
  simulate->add_option("--recency-window", cfg.recency_window, "recent observations fit as locked")
      ->capture_default_str();
  simulate->add_flag("!--no-seed-exemption", cfg.exempt_seeds, "let seed positives be highlighted");
  simulate->add_option("--hyper", preset, "preset name or config file")->capture_default_str();
  simulate->add_option("--out", out_path, "CSV output")->capture_default_str();
  simulate->add_option("--threads", threads, "parallel sessions")->capture_default_str();
  simulate->add_flag("--runtime-serial", runtime_serial, "run sessions serially for clean timings");

  // plotdata
  auto* plot = app.add_subcommand("plotdata", "pivot a results CSV into one column per curve");
  std::string plot_in, plot_out = "-";
  bool plot_runtime = false;
  plot->add_option("input", plot_in, "results CSV")->required();
  plot->add_option("-o,--out", plot_out, "output (- for stdout)")->capture_default_str();
  plot->add_flag("--runtime", plot_runtime, "emit mean step seconds instead of F1");

  // gen-corpus
  auto* gen = app.add_subcommand("gen-corpus", "write the synthetic newsgroup-style corpus");
  std::string gen_root;
  synthetic::Settings gen_settings;
  gen->add_option("root", gen_root, "output directory")->required();
  gen->add_option("--per-group", gen_settings.per_group, "documents per group")->capture_default_str();
  gen->add_option("--seed", gen_settings.seed, "generator seed")->capture_default_str();

  // preset
  auto* pre = app.add_subcommand("preset", "print a hyperparameter preset in config format");
  std::string preset_name;
  pre->add_option("name", preset_name, "simulation|interactive")->required();

  // serve
  auto* serve = app.add_subcommand("serve", "run the HTTP/JSON service");
  DatasetArgs serve_data;
  serve_data.add(serve);
  std::string host = "127.0.0.1", serve_preset = "interactive";
  int port = 8080;
  ServiceConfig svc_cfg;
  std::string data_dir;
  serve->add_option("--host", host, "listen address")->envname("DRIFTFB_HOST")->capture_default_str();
  serve->add_option("--port", port, "listen port")->envname("DRIFTFB_PORT")->capture_default_str();
  serve->add_option("--data-dir", data_dir, "session logs and snapshots (empty: memory only)")
      ->envname("DRIFTFB_DATA_DIR");
  serve->add_option("--ttl", svc_cfg.ttl_seconds, "idle seconds before a session is evicted")
      ->envname("DRIFTFB_TTL")
      ->capture_default_str();
  serve->add_option("--hyper", serve_preset, "preset name or config file")
      ->envname("DRIFTFB_PRESET")
      ->capture_default_str();
  serve->add_option("--seed", svc_cfg.seed, "service seed")->capture_default_str();
  serve->get_option("--dataset-path")->envname("DRIFTFB_DATASET");

  CLI11_PARSE(app, argc, argv);

  auto load_hyper = [](const std::string& name) {
    if (fs::exists(name)) {
      std::ifstream in(name);
      return read_config(in);
    }
    return Hyperparameters::preset(name);
  };

  try {
    if (*simulate) {
      cfg.hyper = load_hyper(preset);
      cfg.threads = runtime_serial ? 1 : threads;
      const Corpus corpus = sim_data.load(std::cerr);
      const auto models = expand<sim::SimModel>(model, {"ard", "lg", "oracle"}, sim::sim_model_from_string);
      const auto scenarios = expand<sim::Scenario>(scenario, {"A", "B", "C", "D"}, sim::scenario_from_string);
      const auto cells = sim::run_experiment(corpus, models, scenarios, cfg, &std::cerr);
      std::ofstream out(out_path);
      if (!out) throw IoError("cannot write " + out_path);
      sim::write_csv(out, cells);
      std::size_t failed = 0;
      for (const auto& c : cells) failed += c.failures;
      std::cerr << "wrote " << out_path << " (" << failed << " failed sessions)\n";
    } else if (*plot) {
      std::ifstream in(plot_in);
      if (!in) throw IoError("cannot read " + plot_in);
      const auto rows = sim::read_csv(in);
      if (plot_out == "-") {
        sim::write_plotdata(std::cout, rows, plot_runtime);
      } else {
        std::ofstream out(plot_out);
        if (!out) throw IoError("cannot write " + plot_out);
        sim::write_plotdata(out, rows, plot_runtime);
      }
    } else if (*gen) {
      synthetic::write_newsgroups(gen_root, gen_settings);
    } else if (*serve) {
      svc_cfg.hyper = load_hyper(serve_preset);
      svc_cfg.data_dir = data_dir;
      auto corpus = std::make_shared<const Corpus>(serve_data.load(std::cerr));
      Service service(corpus, svc_cfg);
      httplib::Server server;
      mount(server, service);
      std::atomic<bool> running = true;
      std::mutex m;
      std::condition_variable cv;
      std::thread evictor([&] {
        const auto period = std::chrono::duration<double>(std::max(1.0, svc_cfg.ttl_seconds / 4));
        std::unique_lock lock(m);
        while (!cv.wait_for(lock, period, [&] { return !running.load(); })) service.evict_idle();
      });
      std::cerr << "listening on " << host << ':' << port << '\n';
      const bool ok = server.listen(host, port);
      {
        std::lock_guard lock(m);
        running = false;
      }
      cv.notify_all();
      evictor.join();
      if (!ok) throw IoError("cannot listen on " + host + ":" + std::to_string(port));
    } else if (*pre) {
      write_config(std::cout, Hyperparameters::preset(preset_name));
    }
  } catch (const driftfb::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
