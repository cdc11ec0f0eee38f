#pragma once

namespace attrinet {

/// Keeps large scratch buffers (im2col columns, tapes) on the heap instead of
/// mapping and unmapping them on every layer. No-op outside glibc.
void tune_allocator();

}  // namespace attrinet
