#pragma once

// Training entry point for a run directory:
//   config.yaml, checkpoints/step-XXXXXXXX.ckpt, train_log.csv, metadata.json.
// Interrupted runs resume from the newest readable checkpoint.

#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "emlab/nn/checkpoint.hpp"
#include "emlab/pipeline/config.hpp"
#include "emlab/pipeline/csv.hpp"
#include "emlab/train.hpp"

namespace emlab {

inline const std::vector<std::string> kTrainLogHeader = {"step", "loss", "lr", "grad_norm"};

inline std::filesystem::path checkpoint_dir(const std::filesystem::path& run) { return run / "checkpoints"; }

/// Checkpoint steps present in a run directory, ascending.
inline std::vector<std::int64_t> list_checkpoints(const std::filesystem::path& run) {
  std::vector<std::int64_t> out;
  const auto dir = checkpoint_dir(run);
  if (!std::filesystem::exists(dir)) return out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (name.starts_with("step-") && name.ends_with(".ckpt"))
      out.push_back(std::stoll(name.substr(5, name.size() - 10)));
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline nlohmann::json run_metadata(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["name"] = cfg.name;
  j["seed"] = cfg.seed;
  j["model"] = {{"size", cfg.model.name},
                {"layers", cfg.model.layers},
                {"d_model", cfg.model.d_model},
                {"heads", cfg.model.heads},
                {"d_ff", cfg.model.d_ff},
                {"vocab", cfg.model.vocab},
                {"max_seq_len", cfg.model.max_seq_len},
                {"parameter_count", parameter_count(cfg.model)}};
  const auto& t = cfg.train;
  j["train"] = {{"peak_lr", t.peak_lr},         {"warmup_steps", t.warmup_steps}, {"max_steps", t.max_steps},
                {"stop_step", t.final_step()},  {"batch_size", t.batch_size},     {"weight_decay", t.weight_decay},
                {"grad_clip", t.grad_clip},     {"beta1", t.beta1},               {"beta2", t.beta2},
                {"adam_eps", t.adam_eps},       {"weight_decay_embeddings", true},
                {"weight_decay_norms_biases", false}};
  if (t.freeze) {
    j["train"]["freeze"] = {{"blocks", std::vector<int>(t.freeze->blocks.begin(), t.freeze->blocks.end())},
                            {"start", t.freeze->start},
                            {"end", t.freeze->end}};
  }
  j["seeds"] = {{"global", cfg.seed},
                {"test_sets", cfg.measure.test_seed},
                {"diagnostic_sets", cfg.measure.diag_seed}};
  j["init"] = "normal(0, 0.02) weights, zero biases, unit/zero layer-norm scale/shift";
  j["rankme_centered"] = true;
#if defined(__VERSION__)
  j["platform"] = {{"compiler", __VERSION__}, {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                                                            std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                                            std::to_string(EIGEN_MINOR_VERSION)}};
#endif
  return j;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

/// Trains the configured model into `run`. Returns the number of checkpoints on disk.
inline std::size_t run_training(const ExperimentConfig& cfg, const std::filesystem::path& run, bool verbose = true) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(checkpoint_dir(run), ec);
  if (ec) throw std::runtime_error("cannot create run directory " + run.string() + ": " + ec.message());
  write_text_file(run / "config.yaml", cfg.source_text);
  write_text_file(run / "metadata.json", run_metadata(cfg).dump(2) + "\n");

  // resume from the newest checkpoint that still parses
  std::optional<CheckpointRecord> resume;
  for (auto steps = list_checkpoints(run); !steps.empty(); steps.pop_back()) {
    try {
      auto rec = load_checkpoint(checkpoint_dir(run) / checkpoint_filename(steps.back()), cfg.model);
      if (rec.step <= cfg.train.final_step()) {
        resume = std::move(rec);
        break;
      }
    } catch (const CheckpointError& e) {
      std::cerr << "warning: ignoring unreadable checkpoint step " << steps.back() << ": " << e.what() << "\n";
    }
  }

  std::vector<std::vector<std::string>> log_rows;
  const auto log_path = run / "train_log.csv";
  if (resume && fs::exists(log_path)) {
    const auto old = read_csv(log_path);
    for (const auto& r : old.rows)
      if (std::stoll(r[0]) < resume->step) log_rows.push_back(r);
  }
  if (resume && verbose) std::cout << "resuming " << run.string() << " from step " << resume->step << "\n";
  if (resume && resume->step == cfg.train.final_step()) return list_checkpoints(run).size();

  const auto t0 = std::chrono::steady_clock::now();
  TrainSinks sinks;
  sinks.log = [&](const TrainLogRow& r) {
    log_rows.push_back({std::to_string(r.step), fmt_num(r.loss), fmt_num(r.lr), fmt_num(r.grad_norm)});
  };
  sinks.checkpoint = [&](std::int64_t step, const ModelState<float>& m, const OptimizerState& opt) {
    save_checkpoint(checkpoint_dir(run) / checkpoint_filename(step), m, step, opt);
    write_csv(log_path, CsvTable{kTrainLogHeader, log_rows});
    if (verbose && (step % 1000 == 0 || step == cfg.train.final_step())) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::cout << "step " << step << " loss " << (log_rows.empty() ? std::string("-") : log_rows.back()[1]) << " ("
                << fmt_num(secs) << " s)" << std::endl;
    }
  };
  sinks.diagnostic = [&](std::int64_t step, const ModelState<float>& m, const OptimizerState& opt) {
    save_checkpoint(run / ("diagnostic-" + checkpoint_filename(step)), m, step, opt);
    write_csv(log_path, CsvTable{kTrainLogHeader, log_rows});
  };
  train(cfg.model, cfg.train, sinks, std::move(resume));
  return list_checkpoints(run).size();
}

}  // namespace emlab
