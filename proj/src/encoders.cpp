#include "coalesce/encoders.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

namespace coalesce {

std::vector<int> farthest_point_sample(const std::vector<Vec3>& points, size_t m) {
    if (points.empty()) throw std::runtime_error("farthest_point_sample: empty cloud");
    const size_t n = points.size();
    std::vector<int> picked;
    picked.reserve(m);
    std::vector<double> best(n, std::numeric_limits<double>::max());
    int cur = 0;  // deterministic seed point
    for (size_t i = 0; i < std::min(m, n); ++i) {
        picked.push_back(cur);
        int next = 0;
        double far = -1;
        for (size_t j = 0; j < n; ++j) {
            best[j] = std::min(best[j], dist2(points[j], points[cur]));
            if (best[j] > far) {
                far = best[j];
                next = int(j);
            }
        }
        cur = next;
    }
    // more patches than points: repeat cyclically
    for (size_t i = n; i < m; ++i) picked.push_back(picked[i % n]);
    return picked;
}

std::vector<std::vector<int>> ball_query(const std::vector<Vec3>& points,
                                         const std::vector<Vec3>& centers, double r, size_t n) {
    if (r <= 0) throw std::runtime_error("ball_query: radius must be positive");
    const double r2 = r * r;
    std::vector<std::vector<int>> groups(centers.size());
    for (size_t c = 0; c < centers.size(); ++c) {
        auto& g = groups[c];
        g.reserve(n);
        for (size_t j = 0; j < points.size() && g.size() < n; ++j)
            if (dist2(points[j], centers[c]) <= r2) g.push_back(int(j));
        if (g.empty()) {
            // isolated center: fall back to its nearest point
            int nearest = 0;
            double bd = std::numeric_limits<double>::max();
            for (size_t j = 0; j < points.size(); ++j) {
                double d = dist2(points[j], centers[c]);
                if (d < bd) {
                    bd = d;
                    nearest = int(j);
                }
            }
            g.push_back(nearest);
        }
        while (g.size() < n) g.push_back(g.front());
    }
    return groups;
}

std::vector<SAConfig> pointnet_a_spec() {
    const double inf = std::numeric_limits<double>::infinity();
    return {{256, 0.2, 128, {64, 64, 128}},
            {128, 0.4, 128, {128, 128, 128}},
            {1, inf, 0, {128, 128, 128}}};
}

std::vector<SAConfig> pointnet_b_spec() {
    const double inf = std::numeric_limits<double>::infinity();
    return {{256, 0.1, 128, {64, 64, 128}},
            {128, 0.2, 128, {128, 128, 128}},
            {1, inf, 0, {128, 128, 128}}};
}

std::vector<SAConfig> pointnet_c_spec() {
    const double inf = std::numeric_limits<double>::infinity();
    return {{256, 0.05, 128, {32, 32, 64}},
            {128, 0.1, 128, {64, 64, 128}},
            {1, inf, 0, {128, 128, 128}}};
}

void init_pointnet(ParamStore<real>& store, const std::string& prefix,
                   const std::vector<SAConfig>& spec, Rng& rng) {
    size_t in_features = 0;  // first layer sees raw coordinates only
    for (size_t l = 0; l < spec.size(); ++l) {
        std::vector<size_t> widths;
        widths.push_back(3 + in_features);
        for (size_t w : spec[l].widths) widths.push_back(w);
        init_mlp(store, prefix + "/sa" + std::to_string(l), widths, rng);
        in_features = spec[l].widths.back();
    }
}

namespace {

// Canonical scan order: lexicographic sort then a fixed-seed shuffle. This
// makes the FPS seed point and ball-query fill order functions of the point
// multiset, not of the caller's ordering.
std::vector<Vec3> canonical_order(const std::vector<Vec3>& points) {
    std::vector<Vec3> out = points;
    std::sort(out.begin(), out.end(), [](const Vec3& a, const Vec3& b) {
        if (a.x != b.x) return a.x < b.x;
        if (a.y != b.y) return a.y < b.y;
        return a.z < b.z;
    });
    Rng rng(0x5eedc0de);
    for (size_t i = 0; i + 1 < out.size(); ++i)
        std::swap(out[i], out[i + rng.uniform_index(out.size() - i)]);
    return out;
}

}  // namespace

RVar pointnet_forward(RTape& tape, const ParamStore<real>& store, const std::string& prefix,
                      const std::vector<SAConfig>& spec, const std::vector<Vec3>& points,
                      bool trainable) {
    if (points.empty()) throw std::runtime_error("pointnet_forward: empty cloud");
    std::vector<Vec3> cur_pts = canonical_order(points);
    RVar cur_feat{-1};  // none at the first layer

    for (size_t l = 0; l < spec.size(); ++l) {
        const SAConfig& sa = spec[l];
        auto vars = mlp_leaves(tape, store, prefix + "/sa" + std::to_string(l), trainable);

        std::vector<Vec3> centers;
        std::vector<int> flat_idx;
        std::vector<size_t> offsets{0};
        if (sa.global()) {
            Vec3 centroid{0, 0, 0};
            for (const auto& p : cur_pts) centroid += p;
            centers = {centroid / double(cur_pts.size())};
            flat_idx.resize(cur_pts.size());
            for (size_t i = 0; i < cur_pts.size(); ++i) flat_idx[i] = int(i);
            offsets.push_back(flat_idx.size());
        } else {
            auto fps = farthest_point_sample(cur_pts, sa.patches);
            centers.reserve(fps.size());
            for (int i : fps) centers.push_back(cur_pts[i]);
            auto groups = ball_query(cur_pts, centers, sa.radius, sa.samples);
            // padding duplicates do not change the max pool; keep uniques only
            std::vector<int> stamp(cur_pts.size(), -1);
            for (size_t c = 0; c < groups.size(); ++c) {
                for (int idx : groups[c])
                    if (stamp[idx] != int(c)) {
                        stamp[idx] = int(c);
                        flat_idx.push_back(idx);
                    }
                offsets.push_back(flat_idx.size());
            }
        }

        // center-relative coordinates enter as constants
        Arr<real> local({flat_idx.size(), 3});
        for (size_t c = 0; c < centers.size(); ++c)
            for (size_t row = offsets[c]; row < offsets[c + 1]; ++row) {
                const Vec3 d = cur_pts[flat_idx[row]] - centers[c];
                local.v[row * 3 + 0] = real(d.x);
                local.v[row * 3 + 1] = real(d.y);
                local.v[row * 3 + 2] = real(d.z);
            }

        RVar x = tape.constant(std::move(local));
        if (cur_feat.valid()) x = tape.concat_cols(x, tape.gather_rows(cur_feat, flat_idx));
        RVar h = mlp_forward(tape, vars.w, vars.b, x, Act::LeakyRelu, Act::LeakyRelu);
        cur_feat = tape.group_max_ragged(h, offsets);
        cur_pts = std::move(centers);

        // bound the final code: max-pooled activations grow without it and
        // saturate the decoders fed from these features; a fixed scale keeps
        // the magnitude differences that separate shapes
        if (sa.global())
            cur_feat = tape.scale(cur_feat, real(1.0 / std::sqrt(double(sa.widths.back()))));
    }
    return cur_feat;  // 1 x final width after the global layer
}

PartCode absent_code(size_t width) {
    PartCode code;
    code.vector.assign(width, real(0));
    code.present = false;
    return code;
}

PartCode encode_align(const ParamStore<real>& store, const std::vector<Vec3>& part_cloud) {
    if (part_cloud.size() != kPartPoints)
        throw std::runtime_error("encode_align: expected " + std::to_string(kPartPoints) +
                                 " points, got " + std::to_string(part_cloud.size()));
    RTape tape;
    RVar f = pointnet_forward(tape, store, "enc_A", pointnet_a_spec(), part_cloud, false);
    PartCode code;
    code.vector = tape.val(f).v;
    code.present = true;
    return code;
}

PartCode encode_joint(const ParamStore<real>& store, const std::string& part_label,
                      const std::vector<Vec3>& part_cloud, const std::vector<Vec3>& near_joint) {
    if (part_cloud.size() != kPartPoints || near_joint.size() != kNearJointPoints)
        throw std::runtime_error("encode_joint: expected " + std::to_string(kPartPoints) + "+" +
                                 std::to_string(kNearJointPoints) + " points, got " +
                                 std::to_string(part_cloud.size()) + "+" +
                                 std::to_string(near_joint.size()));
    RTape tape;
    RVar fb = pointnet_forward(tape, store, "enc_B/" + part_label, pointnet_b_spec(), part_cloud,
                               false);
    RVar fc = pointnet_forward(tape, store, "enc_C/" + part_label, pointnet_c_spec(), near_joint,
                               false);
    RVar cat = tape.concat_cols(fb, fc);
    PartCode code;
    code.vector = tape.val(cat).v;
    code.present = true;
    return code;
}

}  // namespace coalesce
