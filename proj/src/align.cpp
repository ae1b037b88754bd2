#include "coalesce/align.hpp"

#include <algorithm>
#include <cstdio>
#include <limits>
#include <set>
#include <stdexcept>

namespace coalesce {

PointCloud apply_transform(const PointCloud& cloud, const SimilarityTransform& xf) {
    if (!(xf.s > 0) || !std::isfinite(xf.s) || !std::isfinite(xf.t.x) ||
        !std::isfinite(xf.t.y) || !std::isfinite(xf.t.z))
        throw std::runtime_error("apply_transform: invalid transform");
    PointCloud out = cloud;
    for (auto& p : out.points) p = xf.apply(p);
    return out;  // uniform scale leaves normals unchanged
}

TriMesh apply_transform(const TriMesh& mesh, const SimilarityTransform& xf) {
    TriMesh out = mesh;
    for (auto& v : out.vertices) v = xf.apply(v);
    return out;
}

void CategoryConfig::validate() const {
    if (part_labels.size() < 2)
        throw std::runtime_error("category '" + name + "' needs at least 2 part slots");
    std::set<std::string> uniq(part_labels.begin(), part_labels.end());
    if (uniq.size() != part_labels.size())
        throw std::runtime_error("category '" + name + "' has duplicate part labels");
    if (tau < 0) throw std::runtime_error("erosion tau must be >= 0");
}

int CategoryConfig::slot_of(const std::string& label) const {
    for (size_t i = 0; i < part_labels.size(); ++i)
        if (part_labels[i] == label) return int(i);
    return -1;
}

CategoryConfig chairlike_category() {
    CategoryConfig c;
    c.name = "chairlike";
    c.part_labels = {"back", "seat", "leg", "arm"};
    c.tau = 0.05;
    return c;
}

CategoryConfig muglike_category() {
    CategoryConfig c;
    c.name = "muglike";
    c.part_labels = {"body", "handle"};
    c.tau = 0.05;
    return c;
}

// ---- regressor -------------------------------------------------------------

void init_align_regressor(ParamStore<real>& store, size_t slots, Rng& rng) {
    init_mlp(store, "reg", {kAlignCodeWidth * slots, 512, 512, 4 * slots}, rng,
             /*zero_final=*/true);
}

RVar align_regressor_forward(RTape& tape, const ParamStore<real>& store, RVar codes,
                             bool trainable) {
    auto vars = mlp_leaves(tape, store, "reg", trainable);
    if (vars.w.size() != 3) throw std::runtime_error("align regressor must have 3 layers");
    RVar h1 = tape.leaky_relu(tape.add_bias(tape.matmul(codes, vars.w[0]), vars.b[0]));
    RVar h2 = tape.leaky_relu(tape.add_bias(tape.matmul(h1, vars.w[1]), vars.b[1]));
    RVar h3 = tape.add(h2, h1);  // skip connection
    return tape.add_bias(tape.matmul(h3, vars.w[2]), vars.b[2]);
}

namespace {

std::vector<SimilarityTransform> raw_to_transforms(const Arr<real>& raw,
                                                   const std::vector<PartCode>& codes) {
    std::vector<SimilarityTransform> out(codes.size());
    for (size_t k = 0; k < codes.size(); ++k) {
        if (!codes[k].present) continue;  // identity
        out[k].s = std::exp(double(raw.v[4 * k]));
        out[k].t = {double(raw.v[4 * k + 1]), double(raw.v[4 * k + 2]), double(raw.v[4 * k + 3])};
    }
    return out;
}

Arr<real> concat_codes(const std::vector<PartCode>& codes) {
    Arr<real> row({1, kAlignCodeWidth * codes.size()});
    for (size_t k = 0; k < codes.size(); ++k) {
        if (codes[k].vector.size() != kAlignCodeWidth)
            throw std::runtime_error("predict_transforms: code " + std::to_string(k) +
                                     " has width " + std::to_string(codes[k].vector.size()));
        std::copy(codes[k].vector.begin(), codes[k].vector.end(),
                  row.v.begin() + k * kAlignCodeWidth);
    }
    return row;
}

}  // namespace

std::vector<SimilarityTransform> predict_transforms(const ParamStore<real>& store,
                                                    const std::vector<PartCode>& codes) {
    RTape tape;
    RVar raw = align_regressor_forward(tape, store, tape.constant(concat_codes(codes)), false);
    return raw_to_transforms(tape.val(raw), codes);
}

// ---- EMD ---------------------------------------------------------------------

namespace {

// Jonker-Volgenant shortest augmenting path assignment, O(n^3).
std::vector<int> solve_assignment(const std::vector<double>& cost, int n) {
    const double inf = std::numeric_limits<double>::max();
    std::vector<double> u(n + 1, 0), v(n + 1, 0), minv(n + 1);
    std::vector<int> p(n + 1, 0), way(n + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::fill(minv.begin(), minv.end(), inf);
        std::vector<bool> used(n + 1, false);
        do {
            used[j0] = true;
            int i0 = p[j0], j1 = -1;
            double delta = inf;
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                double cur = cost[size_t(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0);
    }
    std::vector<int> row_to_col(n);
    for (int j = 1; j <= n; ++j)
        if (p[j] > 0) row_to_col[p[j] - 1] = j - 1;
    return row_to_col;
}

}  // namespace

std::vector<int> emd_assignment(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
    if (a.size() != b.size())
        throw std::runtime_error("emd: cardinality mismatch " + std::to_string(a.size()) +
                                 " vs " + std::to_string(b.size()));
    if (a.empty()) throw std::runtime_error("emd: empty point sets");
    const int n = int(a.size());
    std::vector<double> cost(size_t(n) * n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) cost[size_t(i) * n + j] = dist(a[i], b[j]);
    return solve_assignment(cost, n);
}

double emd_loss(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
    auto assignment = emd_assignment(a, b);
    double acc = 0;
    for (size_t i = 0; i < a.size(); ++i) acc += dist(a[i], b[assignment[i]]);
    return acc / double(a.size());
}

// ---- training -------------------------------------------------------------------

namespace {

struct EmdSubsample {
    // (slot, point index) pairs plus ground-truth positions
    std::vector<std::pair<int, int>> picks;
    std::vector<Vec3> gt;
};

EmdSubsample make_subsample(const AlignSample& sample, size_t count, Rng rng) {
    EmdSubsample out;
    std::vector<std::pair<int, int>> pool;
    for (size_t k = 0; k < sample.parts.size(); ++k) {
        if (!sample.parts[k].present) continue;
        for (size_t j = 0; j < sample.parts[k].cloud.size(); ++j)
            pool.push_back({int(k), int(j)});
    }
    if (pool.empty()) throw std::runtime_error("train_alignment: sample has no present parts");
    for (size_t i = 0; i < count && i < pool.size(); ++i) {
        std::swap(pool[i], pool[i + rng.uniform_index(pool.size() - i)]);
        out.picks.push_back(pool[i]);
    }
    while (out.picks.size() < count) out.picks.push_back(pool[rng.uniform_index(pool.size())]);
    for (auto& [k, j] : out.picks)
        out.gt.push_back(sample.parts[k].gt.apply(sample.parts[k].cloud[j]));
    return out;
}

}  // namespace

std::vector<double> train_alignment(ParamStore<real>& store,
                                    const std::vector<AlignSample>& dataset,
                                    const AlignTrainConfig& cfg) {
    if (dataset.empty()) throw std::runtime_error("train_alignment: empty dataset");
    const size_t slots = dataset[0].parts.size();

    std::vector<EmdSubsample> subsamples;
    for (size_t s = 0; s < dataset.size(); ++s)
        subsamples.push_back(make_subsample(dataset[s], cfg.emd_points, Rng(cfg.seed ^ (s * 7))));

    // frozen-encoder mode: codes depend only on the (fixed) clouds
    std::vector<std::vector<PartCode>> cached_codes;
    if (!cfg.train_encoder) {
        for (const auto& sample : dataset) {
            std::vector<PartCode> codes;
            for (const auto& part : sample.parts)
                codes.push_back(part.present ? encode_align(store, part.cloud)
                                             : absent_code(kAlignCodeWidth));
            cached_codes.push_back(std::move(codes));
        }
    }

    AdamState<real> adam;
    adam.lr = real(cfg.lr);
    Rng order_rng(cfg.seed ^ 0xa11a);
    std::vector<double> epoch_losses;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<size_t> order(dataset.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        for (size_t i = 0; i + 1 < order.size(); ++i)
            std::swap(order[i], order[i + order_rng.uniform_index(order.size() - i)]);

        double epoch_loss = 0;
        size_t steps = 0;
        for (size_t start = 0; start < order.size(); start += size_t(cfg.batch)) {
            RTape tape;
            std::vector<RVar> sample_losses;
            for (size_t bi = start; bi < std::min(order.size(), start + size_t(cfg.batch)); ++bi) {
                const AlignSample& sample = dataset[order[bi]];
                const EmdSubsample& sub = subsamples[order[bi]];

                // part codes -> one code row
                RVar code_row{-1};
                for (size_t k = 0; k < slots; ++k) {
                    RVar code{-1};
                    if (!sample.parts[k].present) {
                        code = tape.constant(Arr<real>({1, kAlignCodeWidth}));
                    } else if (cfg.train_encoder) {
                        code = pointnet_forward(tape, store, "enc_A", pointnet_a_spec(),
                                                sample.parts[k].cloud, true);
                    } else {
                        Arr<real> c({1, kAlignCodeWidth});
                        std::copy(cached_codes[order[bi]][k].vector.begin(),
                                  cached_codes[order[bi]][k].vector.end(), c.v.begin());
                        code = tape.constant(std::move(c));
                    }
                    code_row = code_row.valid() ? tape.concat_cols(code_row, code) : code;
                }
                RVar raw = align_regressor_forward(tape, store, code_row, true);

                // predicted subsample positions under (exp(log s), t)
                Arr<real> base({sub.picks.size(), 3});
                std::vector<std::vector<int>> rows_by_slot(slots);
                for (size_t i = 0; i < sub.picks.size(); ++i) {
                    auto [k, j] = sub.picks[i];
                    const Vec3& p = sample.parts[k].cloud[j];
                    base.v[i * 3 + 0] = real(p.x);
                    base.v[i * 3 + 1] = real(p.y);
                    base.v[i * 3 + 2] = real(p.z);
                    rows_by_slot[k].push_back(int(i));
                }
                RVar base_var = tape.constant(std::move(base));
                RVar pred{-1};
                std::vector<int> row_order;
                for (size_t k = 0; k < slots; ++k) {
                    if (rows_by_slot[k].empty()) continue;
                    RVar pts = tape.gather_rows(base_var, rows_by_slot[k]);
                    RVar log_s = tape.slice_cols(raw, 4 * k, 1);
                    RVar trans = tape.slice_cols(raw, 4 * k + 1, 3);
                    RVar moved = tape.add_bias(tape.mul_scalar(pts, tape.exp(log_s)),
                                               tape.sum_over_axis(trans, 0));
                    pred = pred.valid() ? tape.concat_rows(pred, moved) : moved;
                    row_order.insert(row_order.end(), rows_by_slot[k].begin(),
                                     rows_by_slot[k].end());
                }

                // optimal assignment held fixed within the step
                std::vector<Vec3> pred_pts(row_order.size());
                const Arr<real>& pv = tape.val(pred);
                for (size_t i = 0; i < row_order.size(); ++i)
                    pred_pts[i] = {double(pv.at(i, 0)), double(pv.at(i, 1)), double(pv.at(i, 2))};
                std::vector<Vec3> gt_pts(row_order.size());
                for (size_t i = 0; i < row_order.size(); ++i) gt_pts[i] = sub.gt[row_order[i]];
                auto assignment = emd_assignment(pred_pts, gt_pts);

                Arr<real> gt_matched({row_order.size(), 3});
                for (size_t i = 0; i < row_order.size(); ++i) {
                    const Vec3& g = gt_pts[assignment[i]];
                    gt_matched.v[i * 3 + 0] = real(g.x);
                    gt_matched.v[i * 3 + 1] = real(g.y);
                    gt_matched.v[i * 3 + 2] = real(g.z);
                }
                RVar diff = tape.sub(pred, tape.constant(std::move(gt_matched)));
                RVar dist_sq = tape.sum_over_axis(tape.square(diff), 1);
                RVar dists = tape.sqrt_op(tape.add_const(dist_sq, real(1e-18)));
                sample_losses.push_back(tape.reduce_mean(dists));
            }

            RVar loss = sample_losses[0];
            for (size_t i = 1; i < sample_losses.size(); ++i) loss = tape.add(loss, sample_losses[i]);
            loss = tape.scale(loss, real(1) / real(sample_losses.size()));
            tape.backward(loss);
            epoch_loss += double(tape.scalar_val(loss));
            ++steps;

            adam_step(store, tape.param_grads(), adam);
        }
        epoch_losses.push_back(epoch_loss / double(steps));
        if (cfg.verbose)
            std::printf("align epoch %d: emd %.6f\n", epoch, epoch_losses.back());
    }
    return epoch_losses;
}

}  // namespace coalesce
