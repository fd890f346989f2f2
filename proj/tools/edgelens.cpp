#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "edgelens/edgelens.hpp"

namespace fs = std::filesystem;
using namespace edgelens;

namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
};

EngineConfig load_config(const Common& c) {
  EngineConfig cfg = c.config_path.empty() ? EngineConfig{} : EngineConfig::load(c.config_path);
  if (c.seed) cfg.sampler.seed = *c.seed;
  return cfg;
}

BackendRegistry registry() {
  auto r = BackendRegistry::with_defaults();
  register_remote_backends(r);
  return r;
}

VocabularyPrompt parse_vocab(const std::string& list) {
  std::vector<std::string> cats;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    cats.push_back(b == std::string::npos ? std::string() : item.substr(b, e - b + 1));
  }
  if (list.empty()) cats.clear();
  return VocabularyPrompt::create(std::move(cats));
}

int run_analyze(const Common& common, const std::string& input, const std::string& vocab_list,
                const std::string& out, bool dump_fusion) {
  const auto cfg = load_config(common);
  const auto vocab = parse_vocab(vocab_list);
  const FixtureVideo video = load_fixture(input);
  Engine engine(cfg, registry());
  engine.begin_run();
  const auto a = engine.analyze(video, vocab);
  const fs::path dir(out);
  write_file(dir / "events.jsonl", serialize_log(a.log));
  write_file(dir / "keyframes.json", to_json(a.keyframes).dump() + "\n");
  if (dump_fusion) std::cout << describe(engine.represent(video, a.keyframes)).dump() << "\n";
  std::cerr << "wrote " << (dir / "events.jsonl").string() << " (" << a.log.events().size() << " events) and "
            << (dir / "keyframes.json").string() << " (k=" << a.keyframes.k << ")\n";
  return exit_code::ok;
}

int run_ask(const Common& common, const std::string& log_path, const std::string& kf_path,
            const std::string& question) {
  const auto cfg = load_config(common);
  const auto log = parse_log(read_file(log_path));
  const auto keyframes = read_keyframes(kf_path);
  const FixtureVideo video = resolve_video(log.meta());
  Engine engine(cfg, registry());
  engine.begin_run();
  auto session = engine.open_session("cli", log, keyframes);
  const auto r = engine.ask(session, question, video, keyframes);
  std::cout << r.reply.text << "\n";
  return exit_code::ok;
}

int run_bench(const Common& common, std::vector<std::string> variants, const std::string& fixture,
              const std::string& vocab_list, const std::string& out) {
  const auto cfg = load_config(common);
  if (variants.empty()) variants = ablation_variants();
  const auto vocab = parse_vocab(vocab_list);
  const FixtureVideo video = load_fixture(fixture);
  const auto rows = run_bench(cfg, variants, video, vocab, registry());
  std::cout << format_ablation_table(rows);
  if (!out.empty()) write_file(fs::path(out) / "ablation.json", to_json(rows).dump(2) + "\n");
  return exit_code::ok;
}

int run_serve(const Common& common, const std::string& host, int port, const std::string& data_dir) {
  const auto cfg = load_config(common);
  Service service(cfg, data_dir.empty() ? default_data_dir() : fs::path(data_dir), registry());
  std::cerr << "serving on http://" << host << ":" << port << " (data: " << service.data_dir().string() << ")\n";
  return serve(service, host, port) ? exit_code::ok : exit_code::failure;
}

int run_templates(const std::string& out) {
  for (auto t : kAllTasks)
    write_file(fs::path(out) / (std::string(to_string(t)) + ".tmpl"), builtin_template_text(t));
  return exit_code::ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"edgelens: event-log grounded video understanding on mock backends"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "engine config JSON");
    sub->add_option("--seed", common.seed, "k-means seed override");
  };

  std::string input, vocab = "car,person", out = ".", log_path = "events.jsonl", kf_path = "keyframes.json";
  std::string question, fixture = "driving_30f", host = "127.0.0.1", data_dir;
  bool dump_fusion = false;
  int port = 8080;
  std::vector<std::string> variants;

  auto* analyze = app.add_subcommand("analyze", "perception + keyframe sampling; writes events.jsonl and keyframes.json");
  add_common(analyze);
  analyze->add_option("input", input, "bundled fixture id or fixture JSON path")->required();
  analyze->add_option("--vocab", vocab, "comma-separated categories");
  analyze->add_option("--out", out, "output directory");
  analyze->add_flag("--dump-fusion", dump_fusion, "print fused token shape and block boundaries");

  auto* ask = app.add_subcommand("ask", "answer one question about analyzed artifacts");
  add_common(ask);
  ask->add_option("--log", log_path, "event log JSONL");
  ask->add_option("--keyframes", kf_path, "keyframes JSON");
  ask->add_option("question", question, "question text")->required();

  auto* summarize = app.add_subcommand("summarize", "one-sentence summary of analyzed artifacts");
  add_common(summarize);
  summarize->add_option("--log", log_path, "event log JSONL");
  summarize->add_option("--keyframes", kf_path, "keyframes JSON");

  auto* bench = app.add_subcommand("bench", "ablation table over variants");
  add_common(bench);
  bench->add_option("--variant", variants, "base, +detect, +cluster, full (repeatable; default all)");
  bench->add_option("--fixture", fixture, "fixture to run");
  bench->add_option("--vocab", vocab, "comma-separated categories");
  bench->add_option("--out", out, "directory for ablation.json (empty to skip)");

  auto* serve_cmd = app.add_subcommand("serve", "HTTP API");
  add_common(serve_cmd);
  serve_cmd->add_option("--host", host, "bind address");
  serve_cmd->add_option("--port", port, "port");
  serve_cmd->add_option("--data-dir", data_dir, "data directory (default $EDGELENS_DATA_DIR or ./edgelens-data)");

  auto* tmpl = app.add_subcommand("templates", "write the built-in prompt templates");
  tmpl->add_option("--out", out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return exit_code::config_invalid;
  }

  try {
    if (*analyze) return run_analyze(common, input, vocab, out, dump_fusion);
    if (*ask) return run_ask(common, log_path, kf_path, question);
    if (*summarize) return run_ask(common, log_path, kf_path, "Summarize the video");
    if (*bench) return run_bench(common, variants, fixture, vocab, out);
    if (*serve_cmd) return run_serve(common, host, port, data_dir);
    if (*tmpl) return run_templates(out);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code::failure;
  }
  return exit_code::failure;
}
