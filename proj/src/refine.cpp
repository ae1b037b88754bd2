#include "coalesce/refine.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

namespace coalesce {

double objective_h_value(const std::vector<real>& f_plus, const std::vector<real>& f_minus) {
    if (f_plus.size() != f_minus.size() || f_plus.empty())
        throw std::runtime_error("objective_h: bad probe sizes");
    double acc = 0;
    for (size_t i = 0; i < f_plus.size(); ++i)
        acc += std::abs(double(f_plus[i])) + std::abs(double(f_minus[i]) - 1.0);
    return acc / (2.0 * double(f_plus.size()));
}

RVar objective_h(RTape& tape, RVar f_plus, RVar f_minus) {
    RVar plus_term = tape.reduce_mean(tape.abs_op(f_plus));
    RVar minus_term = tape.reduce_mean(tape.abs_op(tape.add_const(f_minus, real(-1))));
    return tape.scale(tape.add(plus_term, minus_term), real(0.5));
}

namespace {

struct ProbeSelection {
    // per slot: indices of selected cloud points
    std::vector<std::vector<int>> picks;
    size_t total = 0;
};

// k probe points with the smallest transformed distance to their own
// segmentation boundary (uniform scale turns distances into s_k * d0).
ProbeSelection select_probes(const std::vector<RefinePart>& parts,
                             const std::vector<SimilarityTransform>& transforms, size_t k) {
    struct Entry {
        double d;
        int slot, idx;
    };
    std::vector<Entry> entries;
    for (size_t s = 0; s < parts.size(); ++s) {
        if (!parts[s].present) continue;
        for (size_t i = 0; i < parts[s].cloud.size(); ++i)
            entries.push_back({transforms[s].s * parts[s].boundary_dist[i], int(s), int(i)});
    }
    if (entries.empty()) throw std::runtime_error("refine: no probe candidates");
    std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
        if (a.d != b.d) return a.d < b.d;
        if (a.slot != b.slot) return a.slot < b.slot;
        return a.idx < b.idx;
    });
    ProbeSelection sel;
    sel.picks.resize(parts.size());
    size_t take = std::min(k, entries.size());
    for (size_t i = 0; i < take; ++i) sel.picks[entries[i].slot].push_back(entries[i].idx);
    sel.total = take;
    return sel;
}

struct HGraph {
    RVar h;
    std::vector<RVar> s_vars, t_vars;  // per present slot (invalid when absent)
};

// Builds the h objective over probes p = s * p0 + t, probed at +/- lambda n.
HGraph build_h(RTape& tape, const ParamStore<real>& decoder, const Arr<real>& codes_row,
               const std::vector<RefinePart>& parts,
               const std::vector<SimilarityTransform>& transforms, const ProbeSelection& sel,
               double lambda, bool train_transforms, bool train_decoder) {
    HGraph g;
    g.s_vars.resize(parts.size());
    g.t_vars.resize(parts.size());
    RVar plus{-1}, minus{-1};
    for (size_t slot = 0; slot < parts.size(); ++slot) {
        const auto& picks = sel.picks[slot];
        if (picks.empty()) continue;
        const RefinePart& part = parts[slot];

        Arr<real> pts({picks.size(), 3}), offs({picks.size(), 3});
        for (size_t i = 0; i < picks.size(); ++i) {
            const Vec3& p = part.cloud[picks[i]];
            const Vec3 off = part.normals[picks[i]] * lambda;
            pts.v[i * 3 + 0] = real(p.x);
            pts.v[i * 3 + 1] = real(p.y);
            pts.v[i * 3 + 2] = real(p.z);
            offs.v[i * 3 + 0] = real(off.x);
            offs.v[i * 3 + 1] = real(off.y);
            offs.v[i * 3 + 2] = real(off.z);
        }
        std::string base = "xf/" + std::to_string(slot);
        RVar s = tape.param_leaf(base + "/s", Arr<real>({1}, {real(transforms[slot].s)}),
                                 train_transforms);
        RVar t = tape.param_leaf(base + "/t",
                                 Arr<real>({3}, {real(transforms[slot].t.x),
                                                 real(transforms[slot].t.y),
                                                 real(transforms[slot].t.z)}),
                                 train_transforms);
        g.s_vars[slot] = s;
        g.t_vars[slot] = t;

        RVar moved = tape.add_bias(tape.mul_scalar(tape.constant(pts), s), t);
        RVar off_var = tape.constant(std::move(offs));
        RVar p_plus = tape.add(moved, off_var);
        RVar p_minus = tape.sub(moved, off_var);
        plus = plus.valid() ? tape.concat_rows(plus, p_plus) : p_plus;
        minus = minus.valid() ? tape.concat_rows(minus, p_minus) : p_minus;
    }

    RVar codes_var = tape.constant(codes_row);
    RVar f_plus = decoder_forward(tape, decoder, codes_var, plus, train_decoder);
    RVar f_minus = decoder_forward(tape, decoder, codes_var, minus, train_decoder);
    g.h = objective_h(tape, f_plus, f_minus);
    return g;
}

}  // namespace

double evaluate_h(const ParamStore<real>& decoder, const std::vector<PartCode>& codes,
                  const std::vector<RefinePart>& parts,
                  const std::vector<SimilarityTransform>& transforms, const RefineConfig& cfg) {
    RTape tape;
    auto sel = select_probes(parts, transforms, cfg.probe_count);
    auto g = build_h(tape, decoder, joint_codes_row(codes), parts, transforms, sel, cfg.lambda,
                     false, false);
    return double(tape.scalar_val(g.h));
}

RefineResult refine(ParamStore<real>& decoder, const std::vector<PartCode>& codes,
                    const std::vector<RefinePart>& parts,
                    std::vector<SimilarityTransform> initial, const RefineConfig& cfg) {
    cfg.validate();
    if (parts.size() != initial.size())
        throw std::runtime_error("refine: transform count does not match parts");

    RefineResult result;
    result.transforms = std::move(initial);
    Arr<real> codes_row = joint_codes_row(codes);

    ParamStore<real> xf_store;
    auto sync_store = [&]() {
        for (size_t slot = 0; slot < parts.size(); ++slot) {
            if (!parts[slot].present) continue;
            std::string base = "xf/" + std::to_string(slot);
            xf_store.params[base + "/s"] =
                Arr<real>({1}, {real(result.transforms[slot].s)});
            xf_store.params[base + "/t"] =
                Arr<real>({3}, {real(result.transforms[slot].t.x), real(result.transforms[slot].t.y),
                                real(result.transforms[slot].t.z)});
        }
    };
    auto read_store = [&]() {
        for (size_t slot = 0; slot < parts.size(); ++slot) {
            if (!parts[slot].present) continue;
            std::string base = "xf/" + std::to_string(slot);
            const auto& s = xf_store.at(base + "/s");
            const auto& t = xf_store.at(base + "/t");
            result.transforms[slot].s = double(s.v[0]);
            result.transforms[slot].t = {double(t.v[0]), double(t.v[1]), double(t.v[2])};
        }
    };
    sync_store();

    auto dump_state = [&](double h) {
        std::ostringstream os;
        os << "refine: non-finite objective h=" << h << "; transforms:";
        for (size_t slot = 0; slot < parts.size(); ++slot)
            if (parts[slot].present)
                os << " [" << slot << "] s=" << result.transforms[slot].s << " t=("
                   << result.transforms[slot].t.x << ", " << result.transforms[slot].t.y << ", "
                   << result.transforms[slot].t.z << ")";
        return os.str();
    };

    AdamState<real> adam_xf, adam_dec;  // fresh moments for this problem
    adam_xf.lr = real(cfg.lr_transform);
    adam_dec.lr = real(cfg.lr_decoder);

    for (int iter = 0; iter < cfg.iterations; ++iter) {
        auto sel = select_probes(parts, result.transforms, cfg.probe_count);

        // (a) transforms step, decoder frozen
        {
            RTape tape;
            auto g = build_h(tape, decoder, codes_row, parts, result.transforms, sel, cfg.lambda,
                             true, false);
            double h = double(tape.scalar_val(g.h));
            if (!std::isfinite(h)) throw std::runtime_error(dump_state(h));
            result.h_trace.push_back(h);
            tape.backward(g.h);
            adam_step(xf_store, tape.param_grads(), adam_xf);
            read_store();
        }

        // (b) decoder step, transforms frozen
        {
            RTape tape;
            auto g = build_h(tape, decoder, codes_row, parts, result.transforms, sel, cfg.lambda,
                             false, true);
            double h = double(tape.scalar_val(g.h));
            if (!std::isfinite(h)) throw std::runtime_error(dump_state(h));
            tape.backward(g.h);
            adam_step(decoder, tape.param_grads(), adam_dec);
        }
    }

    {
        auto sel = select_probes(parts, result.transforms, cfg.probe_count);
        RTape tape;
        auto g = build_h(tape, decoder, codes_row, parts, result.transforms, sel, cfg.lambda,
                         false, false);
        result.h_trace.push_back(double(tape.scalar_val(g.h)));
    }
    return result;
}

}  // namespace coalesce
