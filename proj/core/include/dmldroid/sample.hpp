#pragma once

#include <string>
#include <vector>

#include "dmldroid/callgraph.hpp"
#include "dmldroid/common.hpp"

namespace dmldroid {

// One application: manifest bit-vector plus the optional artifact modalities.
struct ApkSample {
    std::string id;
    int label = 0;               // 1 malware, 0 benign
    std::vector<double> tf;      // 0/1 manifest feature bits
    Bytes dex;                   // raw classes.dex bytes, empty when absent
    callgraph::CallGraph graph;  // empty when absent

    bool has_dex() const { return !dex.empty(); }
    bool has_graph() const { return graph.node_count() > 0; }
};

}  // namespace dmldroid
