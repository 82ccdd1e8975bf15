#pragma once

#include <string>
#include <vector>

#include "resmo/graph.hpp"

namespace resmo {

enum class BlockKind { Stem, Mobile, Residual, Transition, DenseHead };

/// Channel and filter profile for ResMoNet assembly.
struct ResMoNetProfile
{
    Index input_size = 224;
    Index input_channels = 3;
    Index stem_channels = 32;
    Index stem_branch = 16;
    Index mobile_channels = 64;
    Index transition_channels = 32;
    int transition_kernel = 3;
    int pool = 2;
    int pool_stride = 2;
    Index dense_units = 256;
    Index num_classes = 7;
    double dropout = 0.5;

    static ResMoNetProfile standard() { return {}; }
    /// Small variant for desk-scale training on synthetic 32x32 data.
    static ResMoNetProfile desk();
};

/// Appends one block to `builder`, reading from layer `entry`. Layer names
/// are prefixed with `label` (e.g. "mobile2"), which is also recorded as the
/// block tag. Mobile blocks emit `cfg.mobile_channels`; residual blocks keep
/// the entry shape. Returns the name of the block's last layer.
std::string build_block(GraphBuilder& builder, BlockKind kind, const std::string& entry, const ResMoNetProfile& cfg,
                        const std::string& label);

/// Stem, m mobile blocks, r residual blocks, transition, dense head, softmax.
ModelGraph assemble_resmonet(int m = 1, int r = 1, const ResMoNetProfile& cfg = ResMoNetProfile::standard());

} // namespace resmo
