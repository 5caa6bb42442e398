#pragma once

#include <cmath>
#include <vector>

#include "skiplab/autograd.hpp"

namespace skiplab {

// 2D grid coordinate carried by a token. Phases are derived from these
// coordinates alone, never from the token's position in the sequence.
struct TokenCoord {
    double row = 0.0;
    double col = 0.0;
};

// Rotation tables for rotate-half rotary embedding over a 2D grid. The
// head dim splits into two contiguous halves; rotation angle for channel
// p < dh/4 comes from the row coordinate, for p >= dh/4 from the column.
struct RopeTables {
    Tensor cos_t; // (T, head_dim/2)
    Tensor sin_t;
};

inline RopeTables build_rope_tables(const std::vector<TokenCoord>& coords, int head_dim,
                                    double base = 10000.0) {
    if (head_dim % 4 != 0) throw config_error("rope2d: head_dim must be divisible by 4");
    int half = head_dim / 2;
    int quarter = head_dim / 4;
    int t = static_cast<int>(coords.size());
    RopeTables tab{Tensor({t, half}), Tensor({t, half})};
    for (int i = 0; i < t; ++i) {
        for (int p = 0; p < half; ++p) {
            int axis_p = p < quarter ? p : p - quarter;
            double freq = std::pow(base, -2.0 * axis_p / half);
            double pos = p < quarter ? coords[i].row : coords[i].col;
            double angle = pos * freq;
            tab.cos_t.at(i, p) = std::cos(angle);
            tab.sin_t.at(i, p) = std::sin(angle);
        }
    }
    return tab;
}

// Rotate-half application: x = [x1 ; x2] per token,
//   out = [x1*cos - x2*sin ; x1*sin + x2*cos].
inline Var apply_rope(Tape& t, Var x, const RopeTables& tab) {
    int half = t.value(x).cols() / 2;
    Var x1 = t.slice_channels(x, 0, half);
    Var x2 = t.slice_channels(x, half, half);
    Var c = t.constant(tab.cos_t);
    Var s = t.constant(tab.sin_t);
    Var lo = t.add(t.mul(x1, c), t.scale(t.mul(x2, s), -1.0));
    Var hi = t.add(t.mul(x1, s), t.mul(x2, c));
    return t.concat_channels({lo, hi});
}

} // namespace skiplab
