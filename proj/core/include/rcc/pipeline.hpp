#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "rcc/annotations.hpp"
#include "rcc/config.hpp"
#include "rcc/slide.hpp"

namespace rcc::pipeline {

// Stage outputs live under <out_dir>/<stage>[/<tag>], each directory
// carrying a MANIFEST.json with the producing config hash and a content
// hash per output file. A stage refuses to overwrite non-empty output
// unless force is set, and refuses upstream artifacts whose embedded
// config hash differs from the current one.

std::filesystem::path stage_dir(const config::ExperimentConfig& cfg, const std::string& stage);

// Exclusive advisory lock on the experiment directory; held for the
// duration of any stage run.
class ExperimentLock {
 public:
  explicit ExperimentLock(const std::filesystem::path& out_dir);
  ~ExperimentLock();
  ExperimentLock(const ExperimentLock&) = delete;
  ExperimentLock& operator=(const ExperimentLock&) = delete;

 private:
  std::filesystem::path path_;
};

struct SlideSet {
  std::vector<ann::SlideRecord> records;
  std::map<std::string, std::shared_ptr<slideio::SlideSource>> sources;
};

// Opens every slide listed by the experiment's index (the synth stage
// output for synthetic experiments, the configured index otherwise).
SlideSet open_slides(const config::ExperimentConfig& cfg);

void run_synth(const config::ExperimentConfig& cfg, bool force);
void run_patch(const config::ExperimentConfig& cfg, bool force);

// mode: labeled_only / fully_supervised / ssl / ssl_finetune. subtype
// restricts training to slides of one diagnosis and suffixes the output
// directory tag.
void run_train_detector(const config::ExperimentConfig& cfg, const std::string& mode,
                        const std::string& subtype, bool force);

// Continues from the initial SSL checkpoint (detector/ssl[_<subtype>]) on
// the extension set.
void run_finetune(const config::ExperimentConfig& cfg, const std::string& subtype, bool force);

// Cancer-probability grid plus overlay for one slide, or for every
// validation/test slide when slide_id is empty. checkpoint may name a
// stage-relative directory; empty picks the best available detector.
void run_hitmap(const config::ExperimentConfig& cfg, const std::string& slide_id,
                const std::string& checkpoint, bool force);

void run_gen_labels(const config::ExperimentConfig& cfg, bool force);
void run_train_subtyper(const config::ExperimentConfig& cfg, const std::string& mode, bool force);
void run_predict_slides(const config::ExperimentConfig& cfg, const std::string& mode, bool force);
void run_evaluate(const config::ExperimentConfig& cfg, const std::string& mode, bool force);

}  // namespace rcc::pipeline
