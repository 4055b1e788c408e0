// Command line front end: one subcommand per pipeline stage plus `run` for
// the whole chain. Every invocation needs a config and an output directory;
// failures print a one-object JSON diagnostic on stderr and exit nonzero.

#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "istr/config.hpp"
#include "istr/errors.hpp"
#include "istr/pipeline.hpp"

namespace {

struct Invocation {
  std::string stage;
  std::string config_path;
  std::string out_dir;
  uint64_t seed = 0;
  bool seed_given = false;
};

void print_error(const std::string& kind, const std::string& message) {
  nlohmann::ordered_json j;
  j["error"] = kind;
  j["message"] = message;
  std::cerr << j.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"train, implant, detect, invert, and repair image backdoors"};
  app.require_subcommand(1);

  const std::vector<std::pair<std::string, std::string>> kStages = {
      {"train", "fit the clean reference model"},
      {"poison", "implant the configured attack and fit the study model"},
      {"detect", "scan for label mutation bias and screen suspect classes"},
      {"dms", "build differential middle-slice envelopes for suspect classes"},
      {"invert", "recover a trigger estimate for each suspect pair"},
      {"repair", "unlearn recovered triggers into a repaired checkpoint"},
      {"eval", "measure accuracies, flip rates, and trigger distances"},
      {"report", "assemble reports from the raw stage dumps"},
      {"run", "run every stage in order"},
  };

  Invocation inv;
  std::vector<CLI::App*> subs;
  for (const auto& [name, desc] : kStages) {
    CLI::App* sub = app.add_subcommand(name, desc);
    sub->add_option("--config", inv.config_path, "JSON run configuration")
        ->required();
    sub->add_option("--out", inv.out_dir, "output directory (append-only)")
        ->required();
    sub->add_option("--seed", inv.seed, "override the config's run seed");
    subs.push_back(sub);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
    print_error("usage", e.what());
    return 2;
  }

  for (size_t i = 0; i < subs.size(); ++i)
    if (subs[i]->parsed()) {
      inv.stage = kStages[i].first;
      inv.seed_given = subs[i]->count("--seed") > 0;
    }

  try {
    istr::RunConfig cfg = istr::parse_config(inv.config_path);
    if (inv.seed_given) istr::apply_seed(cfg, inv.seed);
    istr::PipelineResult result =
        istr::pipeline_run(cfg, inv.out_dir, inv.stage);
    for (const std::string& s : result.stages_run)
      std::cout << "stage " << s << ": done\n";
    for (const std::string& s : result.stages_skipped)
      std::cout << "stage " << s << ": skipped (artifacts already present)\n";
    std::cout << "outputs: " << result.out_dir << "\n";
    return 0;
  } catch (const istr::Error& e) {
    print_error(e.kind(), e.what());
    return 1;
  } catch (const std::exception& e) {
    print_error("internal", e.what());
    return 1;
  }
}
