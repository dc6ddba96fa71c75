#pragma once

namespace vg3d::cli {

// Dispatches {gen, train, eval, bench, attn-dump, decouple}.
// Returns 0 on success, 1 on usage errors, 2 on runtime errors.
int run(int argc, const char* const* argv);

}  // namespace vg3d::cli
