// coopsim: run scenarios, score detection logs, summarize traces.

#include <cstdio>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "coopdrive/perception_oracle.hpp"
#include "coopdrive/scenario.hpp"
#include "coopdrive/sim_engine.hpp"
#include "coopdrive/text_io.hpp"

namespace {

int cmd_run(const std::string& scenario_file, std::optional<std::uint64_t> seed, const std::string& out_dir,
            bool trace, bool fail_on_collision, bool concurrent) {
  auto sc = coopdrive::load_scenario(scenario_file);
  if (seed) sc.reseed(*seed);
  const auto result = coopdrive::run_scenario(sc, {concurrent, trace});
  coopdrive::emit_reports(result, out_dir);
  std::cout << coopdrive::format_summary(result);
  std::cout << coopdrive::format_timing_table(result.metrics);
  if (fail_on_collision && !result.metrics.collisions.empty()) {
    std::cerr << coopdrive::format_collisions(result.metrics.collisions);
    return 2;
  }
  return 0;
}

std::vector<double> parse_thresholds(const std::string& text) {
  std::vector<double> out;
  for (const auto tok : coopdrive::split_on(text, ',')) {
    double v = 0.0;
    if (!coopdrive::try_parse_double(coopdrive::trim(tok), v) || !(v > 0.0 && v <= 1.0))
      throw std::invalid_argument("bad IoU threshold '" + std::string(tok) + "'");
    out.push_back(v);
  }
  return out;
}

int cmd_eval_ap(const std::string& det_file, const std::string& truth_file, const std::string& iou) {
  const auto dets = coopdrive::replay_log(det_file);
  const auto truth = coopdrive::replay_log(truth_file);
  // Pair frames by timestamp; a detection frame with no truth frame is an error.
  std::vector<std::vector<coopdrive::Detection>> det_frames;
  std::vector<std::vector<coopdrive::OrientedRect>> truth_frames;
  std::size_t j = 0;
  for (const auto& tf : truth) {
    truth_frames.emplace_back();
    for (const auto& d : tf.detections) truth_frames.back().push_back(d.box());
    det_frames.emplace_back();
    if (j < dets.size() && dets[j].t == tf.t) det_frames.back() = dets[j++].detections;
  }
  if (j != dets.size())
    throw std::invalid_argument("detection frame at t=" + coopdrive::format_double(dets[j].t) + " has no truth frame");
  const auto res = coopdrive::evaluate_ap(det_frames, truth_frames, parse_thresholds(iou));
  if (res.empty_truth) std::cerr << "warning: truth log has no objects; AP reported as 0\n";
  for (std::size_t i = 0; i < res.ap.size(); ++i)
    std::printf("AP@%s %.6f\n", coopdrive::format_double(res.thresholds[i]).c_str(), res.ap[i]);
  return 0;
}

int cmd_replay(const std::string& trace_file, bool summarize) {
  const auto text = coopdrive::read_file(trace_file);
  const auto summary = coopdrive::summarize_trace(text, trace_file);
  if (summarize) std::cout << coopdrive::format_trace_summary(summary);
  else std::cout << text;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cooperative intersection simulator"};
  app.require_subcommand(1);

  std::string scenario_file, out_dir = "out";
  std::optional<std::uint64_t> seed;
  bool trace = false, fail_on_collision = false, concurrent = false;
  auto* run = app.add_subcommand("run", "Run a scenario and write reports");
  run->add_option("scenario", scenario_file, "Scenario file")->required()->check(CLI::ExistingFile);
  run->add_option("--seed", seed, "Override the scenario seed");
  run->add_option("--out", out_dir, "Report directory");
  run->add_flag("--trace", trace, "Also write bus, detection and truth logs");
  run->add_flag("--fail-on-collision", fail_on_collision, "Exit nonzero when vehicles collide");
  run->add_flag("--concurrent", concurrent, "Run each agent's phases on its own thread");

  std::string det_file, truth_file, iou = "0.3,0.5,0.7";
  auto* eval = app.add_subcommand("eval-ap", "Average precision of a detection log against a truth log");
  eval->add_option("detections", det_file)->required()->check(CLI::ExistingFile);
  eval->add_option("truth", truth_file)->required()->check(CLI::ExistingFile);
  eval->add_option("--iou", iou, "Comma-separated IoU thresholds");

  std::string trace_file;
  bool summarize = false;
  auto* replay = app.add_subcommand("replay", "Print or summarize a trace");
  replay->add_option("trace", trace_file)->required()->check(CLI::ExistingFile);
  replay->add_flag("--summarize", summarize, "Print summary statistics instead of the trace");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) return cmd_run(scenario_file, seed, out_dir, trace, fail_on_collision, concurrent);
    if (*eval) return cmd_eval_ap(det_file, truth_file, iou);
    return cmd_replay(trace_file, summarize);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
