#pragma once

#include "flowmill/cas.hpp"
#include "flowmill/flow_spec.hpp"
#include "flowmill/metadata.hpp"

#include <string>
#include <vector>

namespace flowmill {

// Renders a run's card: one self-contained HTML document with the DAG
// structure (split/foreach/join annotations), a run metadata table and a
// per-task artifact table with value previews. No scripts, no external
// resources. Identical inputs render identical bytes except for the single
// <time> element, which carries the render timestamp.
// Throws Error(RunNotTerminal) while the run is still executing.
std::string render_card(const CasStore& store, const FlowSpec& spec,
                        const RunRecord& run,
                        const std::vector<TaskRecord>& tasks);

// The card bytes with the <time> element blanked: the region that must be
// byte-identical across renders of the same run.
std::string determinism_region(const std::string& html);

// Persists the card through the store and binds it as artifact `_card` on
// the run's end task. Idempotent for identical bytes. Throws
// Error(NotFound) when the run never reached `end`.
ContentHash store_card(const CasStore& store, MetadataStore& meta,
                       const Pathspec& run, const std::string& html);

}  // namespace flowmill
