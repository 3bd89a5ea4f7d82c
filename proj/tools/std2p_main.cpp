#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "std2p/pipeline.hpp"

int main(int argc, char** argv) {
  CLI::App app{"std2p: region correspondence and spatio-temporal pooling on video sequences"};
  app.require_subcommand(1, 1);

  std::string config;
  std::optional<std::string> seed, threads, tau, spatial, temporal, view, out;
  std::vector<std::string> sets;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config, "flat key=value config file");
    sub->add_option("--seed", seed, "root seed");
    sub->add_option("--threads", threads, "worker threads for matching (1 = reference)");
    sub->add_option("--tau", tau, "IoU threshold for region correspondence");
    sub->add_option("--spatial-mode", spatial, "avg or max");
    sub->add_option("--temporal-mode", temporal, "avg or max");
    sub->add_option("--view-mode", view, "single or multi");
    sub->add_option("--out", out, "output directory");
    sub->add_option("--set", sets, "extra key=value override, repeatable");
  };

  const std::vector<std::pair<std::string, std::string>> help{
      {"generate", "write a synthetic sequence bundle from a scene spec"},
      {"match", "build region correspondences for the target frame"},
      {"infer", "predict the target frame with a trained head"},
      {"train", "train the linear head through the pooling layers"},
      {"eval", "segmentation metrics, boundary PR and oracle rows"},
      {"sweep", "multi-view accuracy against the maximum frame distance"}};
  for (const auto& [name, text] : help) add_common(app.add_subcommand(name, text));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  std::vector<std::pair<std::string, std::string>> overrides;
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) {
      std::cerr << "error: config-syntax: --set expects key=value, got \"" << s << "\"\n";
      return 1;
    }
    overrides.emplace_back(s.substr(0, eq), s.substr(eq + 1));
  }
  const std::pair<const char*, std::optional<std::string>*> flags[] = {
      {"seed", &seed},          {"threads", &threads},   {"tau", &tau}, {"spatial_mode", &spatial},
      {"temporal_mode", &temporal}, {"view_mode", &view}, {"out", &out}};
  for (const auto& [key, value] : flags)
    if (*value) overrides.emplace_back(key, **value);

  const auto command = app.get_subcommands().front()->get_name();
  std::optional<std::filesystem::path> file;
  if (!config.empty()) file = config;
  return std2p::pipeline::run(command, file, overrides, std::cout, std::cerr);
}
