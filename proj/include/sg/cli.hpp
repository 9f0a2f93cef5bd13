#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

namespace sg::cli {

// Exit codes shared by every subcommand.
inline constexpr int kOk = 0;
inline constexpr int kVerifyFailure = 1;   // gradcheck threshold breach
inline constexpr int kConfigFailure = 2;   // config unreadable or invalid
inline constexpr int kDataFailure = 3;     // data files / counts / indices
inline constexpr int kCheckpointFailure = 4;
inline constexpr int kMetricFailure = 5;   // embedder / metric breakdown

// Each command logs human-readable progress to `log` and returns the exit
// code for main() to pass through. All are deterministic for fixed inputs.

// Loads the run config, echoes every effective value to the log, trains, and
// writes train_log.csv, model.final.ckpt (plus model.iter*.ckpt at the
// configured interval) and effective.cfg under out_dir.
int cmd_train(const std::string& config_path, const std::string& out_dir,
              std::ostream& log);

// Eval-mode reconstructions of the first `count` images, written as a PPM
// grid of original/reconstruction pairs: 2 columns, count rows.
int cmd_reconstruct(const std::string& checkpoint_path,
                    const std::vector<std::string>& data_paths,
                    std::int64_t count, const std::string& out_ppm,
                    std::ostream& log);

// Latent interpolation between two images: tile k decodes
// z1 + k*(z2 - z1)/steps, so tile 0 is the plain reconstruction of index1.
int cmd_interpolate(const std::string& checkpoint_path,
                    const std::vector<std::string>& data_paths,
                    std::int64_t index1, std::int64_t index2,
                    std::int64_t steps, const std::string& out_ppm,
                    std::ostream& log);

// Decodes `count` uniform [-1,1) latents drawn from `seed`.
int cmd_sample(const std::string& checkpoint_path, std::int64_t count,
               std::uint64_t seed, const std::string& out_ppm,
               std::ostream& log);

// Reconstruction quality of the first `count` images: prints exactly one
// machine-readable line `count=... mse=... ssim=... ms_ssim=... frechet=...`.
int cmd_eval(const std::string& checkpoint_path,
             const std::vector<std::string>& data_paths, std::int64_t count,
             const std::string& embedder_spec, std::ostream& log);

// Finite-difference verification of every backward rule: one line per
// component with its max relative error, exit 0 only if all pass their
// thresholds. corrupt_backward injects a fixture op with a deliberately
// wrong derivative to prove the checker catches it.
int cmd_gradcheck(std::ostream& log, bool corrupt_backward = false);

}  // namespace sg::cli
