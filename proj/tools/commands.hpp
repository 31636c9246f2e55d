#ifndef LIFT_TOOLS_COMMANDS_HPP
#define LIFT_TOOLS_COMMANDS_HPP

namespace lift::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kOverBudget = 1;
inline constexpr int kFailure = 2;

/// Parses argv and runs one subcommand: infer, fuse, gen-weights, gen-cloud,
/// macs, ocm, dpu, calibrate.
int run(int argc, char** argv);

}  // namespace lift::cli

#endif  // LIFT_TOOLS_COMMANDS_HPP
