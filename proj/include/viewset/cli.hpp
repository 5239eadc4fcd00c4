#pragma once

namespace viewset {

// Parses argv and dispatches to the gen/train/eval/retrieve/ablate/gradcheck/
// dump-attention subcommands. Returns the process exit code: 0 iff the
// command's postconditions held.
int run_cli(int argc, const char* const* argv);

} // namespace viewset
