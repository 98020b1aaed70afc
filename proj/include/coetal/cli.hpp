#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "coetal/config.hpp"

namespace coetal::cli {

// 0 success, 1 IO failure, 2 configuration error, 3 output exists and
// --overwrite was not given.
enum ExitCode { exit_ok = 0, exit_io = 1, exit_config = 2, exit_exists = 3 };

struct CommonFlags {
    std::optional<std::uint64_t> seed;
    std::optional<int> shots;
    std::optional<int> t_snippets;
    std::optional<std::string> out;
    bool overwrite = false;
    bool quiet = false; // suppress progress lines on stdout
};

// applies --seed / --shots / --t-snippets overrides onto the parsed config
void apply_overrides(config::RunConfig& cfg, const CommonFlags& flags);

int cmd_synth(const config::RunConfig& cfg, const CommonFlags& flags);

int cmd_train(const config::RunConfig& cfg, const CommonFlags& flags,
              const std::optional<std::string>& manifest_path);

struct EvalFlags {
    std::optional<std::string> manifest;
    std::optional<std::string> checkpoint;
    std::string split = "test";
    int episodes = 20;
    bool oracle_probs = false; // probe = ground-truth query mask
    bool zero_probs = false;   // probe = all zeros
};

int cmd_eval(const config::RunConfig& cfg, const CommonFlags& flags, const EvalFlags& eval);

int cmd_gentext(const config::RunConfig& cfg, const CommonFlags& flags,
                const std::optional<std::string>& manifest_path);

int cmd_verify(const config::RunConfig& cfg, const CommonFlags& flags,
               const std::optional<std::string>& manifest_path);

int cmd_plot(const config::RunConfig& cfg, const CommonFlags& flags,
             const std::vector<std::string>& metric_files);

// sweeps alpha over a grid against a labeled seed set
// [{"text", "frames": [descriptor strings], "label": bool}]
int cmd_calibrate(const config::RunConfig& cfg, const CommonFlags& flags,
                  const std::string& labeled_path);

// frame payloads for a record at the configured sampling rate; the frame
// descriptor is the snippet caption when texts exist, else a synthetic
// foreground/background tag derived from the annotations
std::vector<FramePayload> frames_for_record(const datapack::VideoRecord& record, double fps);

} // namespace coetal::cli
