#pragma once

// Command-line front end: `uvcgan-lab {pretrain|train|translate|evaluate}`.
//
// Exit codes: 0 success, 2 configuration error (including unknown config
// keys and bad flags), 3 dataset error (missing/empty directories), 4 KID
// subset size exceeding the available population, 1 anything else.

namespace uvcgan::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitDataset = 3;
inline constexpr int kExitKidSubset = 4;

int run(int argc, const char* const* argv);

}  // namespace uvcgan::cli
