#include "coalesce/jointsynth.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <stdexcept>

namespace coalesce {

OccupancyGrid build_joint_volume(const OccupancyGrid& shape_grid,
                                 const OccupancyGrid& eroded_parts_grid, int dilation_steps) {
    OccupancyGrid removed = grid_and_not(shape_grid, eroded_parts_grid);
    if (removed.count_inside() == 0)
        throw std::runtime_error("no joint volume: erosion removed no occupied cells");
    return dilate(removed, dilation_steps);
}

namespace {

std::vector<size_t> inside_cell_list(const OccupancyGrid& g) {
    std::vector<size_t> cells;
    for (size_t i = 0; i < g.cell_count(); ++i)
        if ((g.bits[i >> 6] >> (i & 63)) & 1) cells.push_back(i);
    return cells;
}

Vec3 random_point_in_cell(const OccupancyGrid& g, size_t cell, Rng& rng) {
    size_t rx = g.res[0], ry = g.res[1];
    size_t x = cell % rx, y = (cell / rx) % ry, z = cell / (rx * ry);
    return g.origin + Vec3{(double(x) + rng.uniform()) * g.cell_size,
                           (double(y) + rng.uniform()) * g.cell_size,
                           (double(z) + rng.uniform()) * g.cell_size};
}

}  // namespace

TrainingSampleSet sample_training_points(const TriMesh& shape, const OccupancyGrid& shape_grid,
                                         const OccupancyGrid& joint_volume, size_t n,
                                         std::array<double, 3> fractions, uint64_t seed) {
    TrainingSampleSet out;
    out.joint_count = size_t(std::floor(double(n) * fractions[0]));
    out.near_count = size_t(std::floor(double(n) * fractions[1]));
    out.far_count = n - out.joint_count - out.near_count;

    auto joint_cells = inside_cell_list(joint_volume);
    if (out.joint_count > 0 && joint_cells.empty())
        throw std::runtime_error("sample_training_points: empty joint volume");

    OccupancyGrid near_band = grid_and_not(dilate(shape_grid, 2), shape_grid);
    auto near_cells = inside_cell_list(near_band);

    Rng rng(seed);
    out.points.reserve(n);
    out.labels.reserve(n);

    for (size_t i = 0; i < out.joint_count; ++i) {
        Vec3 p = random_point_in_cell(joint_volume, joint_cells[rng.uniform_index(joint_cells.size())], rng);
        out.points.push_back(p);
        out.labels.push_back(point_inside(shape, p) ? 1 : 0);
    }
    for (size_t i = 0; i < out.near_count; ++i) {
        // rejection keeps only genuinely outside points
        for (int attempt = 0;; ++attempt) {
            if (near_cells.empty()) throw std::runtime_error("sample_training_points: no near-surface band");
            Vec3 p = random_point_in_cell(near_band, near_cells[rng.uniform_index(near_cells.size())], rng);
            if (!point_inside(shape, p)) {
                out.points.push_back(p);
                out.labels.push_back(0);
                break;
            }
            if (attempt > 1000)
                throw std::runtime_error("sample_training_points: cannot find outside point near surface");
        }
    }
    Vec3 lo = shape_grid.origin;
    Vec3 hi = shape_grid.origin + Vec3{shape_grid.res[0] * shape_grid.cell_size,
                                       shape_grid.res[1] * shape_grid.cell_size,
                                       shape_grid.res[2] * shape_grid.cell_size};
    for (size_t i = 0; i < out.far_count; ++i) {
        for (int attempt = 0;; ++attempt) {
            Vec3 p{rng.uniform(lo.x, hi.x), rng.uniform(lo.y, hi.y), rng.uniform(lo.z, hi.z)};
            if (!point_inside(shape, p)) {
                out.points.push_back(p);
                out.labels.push_back(0);
                break;
            }
            if (attempt > 10000)
                throw std::runtime_error("sample_training_points: shape fills the whole grid");
        }
    }
    return out;
}

JointBoundarySet select_joint_boundary(const std::vector<PointCloud>& part_clouds,
                                       const std::vector<Polyline>& seg_boundary, size_t k) {
    struct Entry {
        double d;
        int slot;
        int idx;
    };
    std::vector<Entry> entries;
    for (size_t s = 0; s < part_clouds.size(); ++s)
        for (size_t i = 0; i < part_clouds[s].size(); ++i)
            entries.push_back({polyline_distance(part_clouds[s].points[i], seg_boundary),
                               int(s), int(i)});
    std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
        if (a.d != b.d) return a.d < b.d;
        if (a.slot != b.slot) return a.slot < b.slot;
        return a.idx < b.idx;
    });

    JointBoundarySet out;
    out.short_of_target = entries.size() < k;
    size_t take = std::min(k, entries.size());
    for (size_t i = 0; i < take; ++i) {
        const auto& e = entries[i];
        out.points.push_back(part_clouds[e.slot].points[e.idx]);
        out.normals.push_back(part_clouds[e.slot].normals[e.idx]);
        out.part_slot.push_back(e.slot);
    }
    return out;
}

// ---- decoder ---------------------------------------------------------------------

namespace {
const std::vector<size_t> kDecoderHidden{1024, 512, 256, 128};
}

void init_decoder(ParamStore<real>& store, size_t slots, Rng& rng) {
    size_t in = kJointCodeWidth * slots + 3;
    // the query point re-enters at layer 2, so widths are spelled out here
    std::vector<size_t> ins{in, kDecoderHidden[0] + 3, kDecoderHidden[1], kDecoderHidden[2],
                            kDecoderHidden[3]};
    std::vector<size_t> outs{kDecoderHidden[0], kDecoderHidden[1], kDecoderHidden[2],
                             kDecoderHidden[3], 1};
    for (size_t l = 0; l < ins.size(); ++l) {
        Arr<real> w({ins[l], outs[l]});
        real limit = std::sqrt(real(6) / real(ins[l] + outs[l]));
        for (real& x : w.v) x = real(rng.uniform(-double(limit), double(limit)));
        store.params["dec/w" + std::to_string(l)] = std::move(w);
        store.params["dec/b" + std::to_string(l)] = Arr<real>({outs[l]});
    }
}

RVar decoder_forward(RTape& tape, const ParamStore<real>& store, RVar codes_row, RVar points,
                     bool trainable) {
    const size_t m = tape.val(points).rows();
    const size_t code_width = tape.val(codes_row).cols();
    const Arr<real>& w0_full = store.at("dec/w0");
    if (w0_full.shape[0] != code_width + 3)
        throw std::runtime_error("decoder_forward: code width " + std::to_string(code_width) +
                                 " does not match dec/w0 input " +
                                 std::to_string(w0_full.shape[0]));

    // split the first layer so the code half is computed once per batch
    RVar w0 = tape.param_leaf("dec/w0", w0_full, trainable);
    std::vector<int> code_rows(code_width), point_rows(3);
    std::iota(code_rows.begin(), code_rows.end(), 0);
    std::iota(point_rows.begin(), point_rows.end(), int(code_width));
    RVar w0c = tape.gather_rows(w0, code_rows);
    RVar w0p = tape.gather_rows(w0, point_rows);
    RVar b0 = tape.param_leaf("dec/b0", store.at("dec/b0"), trainable);

    RVar code_part = tape.matmul(codes_row, w0c);               // 1 x 1024
    RVar h = tape.matmul(points, w0p);                          // m x 1024
    h = tape.add_bias(h, tape.sum_over_axis(code_part, 0));
    h = tape.leaky_relu(tape.add_bias(h, b0));

    auto layer = [&](RVar x, int l, Act act) {
        RVar w = tape.param_leaf("dec/w" + std::to_string(l), store.at("dec/w" + std::to_string(l)),
                                 trainable);
        RVar b = tape.param_leaf("dec/b" + std::to_string(l), store.at("dec/b" + std::to_string(l)),
                                 trainable);
        return apply_act(tape, tape.add_bias(tape.matmul(x, w), b), act);
    };
    h = layer(tape.concat_cols(h, points), 1, Act::LeakyRelu);  // point skip into layer 2
    h = layer(h, 2, Act::LeakyRelu);
    h = layer(h, 3, Act::LeakyRelu);
    h = layer(h, 4, Act::Sigmoid);
    (void)m;
    return h;  // m x 1
}

Arr<real> joint_codes_row(const std::vector<PartCode>& codes) {
    if (codes.empty()) throw std::runtime_error("joint_codes_row: no codes");
    const size_t width = codes[0].vector.size();
    Arr<real> row({1, width * codes.size()});
    for (size_t k = 0; k < codes.size(); ++k) {
        if (codes[k].vector.size() != width)
            throw std::runtime_error("joint_codes_row: code " + std::to_string(k) + " has width " +
                                     std::to_string(codes[k].vector.size()) + ", expected " +
                                     std::to_string(width));
        std::copy(codes[k].vector.begin(), codes[k].vector.end(), row.v.begin() + k * width);
    }
    return row;
}

std::vector<real> decode_batch(const ParamStore<real>& store, const std::vector<PartCode>& codes,
                               const std::vector<Vec3>& points) {
    RTape tape;
    Arr<real> pts({points.size(), 3});
    for (size_t i = 0; i < points.size(); ++i) {
        pts.v[i * 3 + 0] = real(points[i].x);
        pts.v[i * 3 + 1] = real(points[i].y);
        pts.v[i * 3 + 2] = real(points[i].z);
    }
    RVar out = decoder_forward(tape, store, tape.constant(joint_codes_row(codes)),
                               tape.constant(std::move(pts)), false);
    return tape.val(out).v;
}

real decode(const ParamStore<real>& store, const std::vector<PartCode>& codes, const Vec3& point) {
    return decode_batch(store, codes, {point})[0];
}

// ---- losses ---------------------------------------------------------------------

RVar loss_mse(RTape& tape, RVar outputs, const std::vector<real>& labels) {
    if (tape.val(outputs).size() != labels.size())
        throw std::runtime_error("loss_mse: " + std::to_string(tape.val(outputs).size()) +
                                 " outputs vs " + std::to_string(labels.size()) + " labels");
    if (labels.empty()) throw std::runtime_error("loss_mse: empty sample set");
    Arr<real> want(tape.val(outputs).shape, std::vector<real>(labels.begin(), labels.end()));
    return tape.reduce_mean(tape.square(tape.sub(outputs, tape.constant(std::move(want)))));
}

double loss_mse_value(const std::vector<real>& outputs, const std::vector<real>& labels) {
    if (outputs.size() != labels.size() || outputs.empty())
        throw std::runtime_error("loss_mse_value: bad sizes");
    double acc = 0;
    for (size_t i = 0; i < outputs.size(); ++i) {
        double d = double(outputs[i]) - double(labels[i]);
        acc += d * d;
    }
    return acc / double(outputs.size());
}

RVar loss_match(RTape& tape, RVar f_plus, RVar f_minus) {
    // (1/2|N|) sum |f(p+ln)|^2 + |f(p-ln)-1|^2  ==  (mean + mean) / 2
    RVar plus_term = tape.reduce_mean(tape.square(f_plus));
    RVar minus_term = tape.reduce_mean(tape.square(tape.add_const(f_minus, real(-1))));
    return tape.scale(tape.add(plus_term, minus_term), real(0.5));
}

double loss_match_value(const std::vector<real>& f_plus, const std::vector<real>& f_minus) {
    if (f_plus.size() != f_minus.size() || f_plus.empty())
        throw std::runtime_error("loss_match_value: bad sizes");
    double acc = 0;
    for (size_t i = 0; i < f_plus.size(); ++i) {
        double a = double(f_plus[i]);
        double b = double(f_minus[i]) - 1.0;
        acc += a * a + b * b;
    }
    return acc / (2.0 * double(f_plus.size()));
}

// ---- pretraining -----------------------------------------------------------------

double pretrain_lr_at(const PretrainConfig& cfg, int epoch) {
    double lr = cfg.lr_start / double(size_t(1) << (epoch / cfg.lr_halving_period));
    return std::max(lr, cfg.lr_floor);
}

size_t schedule_count(size_t base, size_t cap, int period, int epoch) {
    size_t c = base;
    for (int k = 0; k < epoch / period && c < cap; ++k) c *= 2;
    return std::min(c, cap);
}

namespace {

Arr<real> points_to_arr(const std::vector<Vec3>& pts) {
    Arr<real> a({pts.size(), 3});
    for (size_t i = 0; i < pts.size(); ++i) {
        a.v[i * 3 + 0] = real(pts[i].x);
        a.v[i * 3 + 1] = real(pts[i].y);
        a.v[i * 3 + 2] = real(pts[i].z);
    }
    return a;
}

// symmetric squared chamfer with nearest neighbors held fixed per step
RVar chamfer_loss(RTape& tape, RVar pred, const std::vector<Vec3>& target) {
    const Arr<real>& pv = tape.val(pred);
    size_t np = pv.rows(), nt = target.size();
    std::vector<Vec3> pred_pts(np);
    for (size_t i = 0; i < np; ++i)
        pred_pts[i] = {double(pv.at(i, 0)), double(pv.at(i, 1)), double(pv.at(i, 2))};

    std::vector<int> fwd(np), bwd(nt);
    for (size_t i = 0; i < np; ++i) {
        double best = 1e300;
        for (size_t j = 0; j < nt; ++j) {
            double d = dist2(pred_pts[i], target[j]);
            if (d < best) {
                best = d;
                fwd[i] = int(j);
            }
        }
    }
    for (size_t j = 0; j < nt; ++j) {
        double best = 1e300;
        for (size_t i = 0; i < np; ++i) {
            double d = dist2(pred_pts[i], target[j]);
            if (d < best) {
                best = d;
                bwd[j] = int(i);
            }
        }
    }
    Arr<real> target_arr = points_to_arr(target);
    std::vector<Vec3> matched_fwd(np);
    for (size_t i = 0; i < np; ++i) matched_fwd[i] = target[fwd[i]];
    RVar d1 = tape.sub(pred, tape.constant(points_to_arr(matched_fwd)));
    RVar t1 = tape.reduce_mean(tape.sum_over_axis(tape.square(d1), 1));
    RVar pred_matched = tape.gather_rows(pred, bwd);
    RVar d2 = tape.sub(pred_matched, tape.constant(std::move(target_arr)));
    RVar t2 = tape.reduce_mean(tape.sum_over_axis(tape.square(d2), 1));
    return tape.add(t1, t2);
}

}  // namespace

std::vector<double> pretrain_encoders(ParamStore<real>& store, const CategoryConfig& category,
                                      const std::vector<JointShapeData>& dataset,
                                      const PretrainConfig& cfg) {
    if (dataset.empty()) throw std::runtime_error("pretrain_encoders: empty dataset");
    const size_t slots = category.slots();

    // reconstruction decoders are scratch networks, one per slot
    const size_t code_width = cfg.spec_b.back().widths.back() + cfg.spec_c.back().widths.back();
    Rng init_rng(cfg.seed ^ 0x9e37);
    for (size_t k = 0; k < slots; ++k) {
        std::string pre = "pre_dec/" + category.part_labels[k];
        if (!store.has(pre + "/w0"))
            init_mlp(store, pre, {code_width, 512, cfg.recon_points * 3}, init_rng);
    }

    // fixed reconstruction targets: a subsample of each part cloud
    std::vector<std::vector<std::vector<Vec3>>> targets(dataset.size());
    for (size_t s = 0; s < dataset.size(); ++s) {
        targets[s].resize(slots);
        for (size_t k = 0; k < slots; ++k) {
            const auto& part = dataset[s].parts[k];
            if (!part.present) continue;
            Rng rng(cfg.seed ^ (s * 131 + k));
            auto& t = targets[s][k];
            for (size_t i = 0; i < cfg.recon_points; ++i)
                t.push_back(part.cloud[rng.uniform_index(part.cloud.size())]);
        }
    }

    AdamState<real> adam;
    std::vector<double> epoch_losses;
    Rng order_rng(cfg.seed ^ 0xfeed);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        adam.lr = real(pretrain_lr_at(cfg, epoch));
        double total = 0;
        size_t count = 0;
        std::vector<size_t> order(dataset.size());
        std::iota(order.begin(), order.end(), 0);
        for (size_t i = 0; i + 1 < order.size(); ++i)
            std::swap(order[i], order[i + order_rng.uniform_index(order.size() - i)]);

        for (size_t s : order) {
            for (size_t k = 0; k < slots; ++k) {
                const auto& part = dataset[s].parts[k];
                if (!part.present) continue;
                const std::string label = category.part_labels[k];
                RTape tape;
                RVar fb = pointnet_forward(tape, store, "enc_B/" + label, cfg.spec_b, part.cloud,
                                           true);
                RVar fc = pointnet_forward(tape, store, "enc_C/" + label, cfg.spec_c,
                                           part.near_joint, true);
                RVar code = tape.concat_cols(fb, fc);
                auto dec = mlp_leaves(tape, store, "pre_dec/" + label, true);
                RVar flat = mlp_forward(tape, dec.w, dec.b, code, Act::LeakyRelu, Act::None);
                RVar pred = tape.reshape(flat, {cfg.recon_points, 3});
                RVar loss = chamfer_loss(tape, pred, targets[s][k]);
                tape.backward(loss);
                adam_step(store, tape.param_grads(), adam);
                total += double(tape.scalar_val(loss));
                ++count;
            }
        }
        epoch_losses.push_back(total / double(std::max<size_t>(count, 1)));
        if (cfg.verbose)
            std::printf("pretrain epoch %d: lr %.5g chamfer %.6f\n", epoch, double(adam.lr),
                        epoch_losses.back());
    }
    return epoch_losses;
}

// ---- joint training ---------------------------------------------------------------

std::vector<PartCode> compute_joint_codes(const ParamStore<real>& store,
                                          const CategoryConfig& category,
                                          const JointShapeData& shape,
                                          const std::vector<SAConfig>& spec_b,
                                          const std::vector<SAConfig>& spec_c) {
    std::vector<PartCode> codes;
    const size_t code_width = spec_b.back().widths.back() + spec_c.back().widths.back();
    for (size_t k = 0; k < category.slots(); ++k) {
        const auto& part = shape.parts[k];
        if (!part.present) {
            codes.push_back(absent_code(code_width));
            continue;
        }
        RTape tape;
        RVar fb = pointnet_forward(tape, store, "enc_B/" + category.part_labels[k], spec_b,
                                   part.cloud, false);
        RVar fc = pointnet_forward(tape, store, "enc_C/" + category.part_labels[k], spec_c,
                                   part.near_joint, false);
        RVar cat = tape.concat_cols(fb, fc);
        PartCode code;
        code.vector = tape.val(cat).v;
        code.present = true;
        codes.push_back(std::move(code));
    }
    return codes;
}

namespace {

// minibatch of sample indices without replacement
std::vector<int> draw_batch(size_t pool, size_t want, Rng& rng) {
    std::vector<int> idx(pool);
    std::iota(idx.begin(), idx.end(), 0);
    size_t take = std::min(want, pool);
    for (size_t i = 0; i < take; ++i)
        std::swap(idx[i], idx[i + rng.uniform_index(pool - i)]);
    idx.resize(take);
    return idx;
}

}  // namespace

JointTrainResult train_joint(ParamStore<real>& store, const CategoryConfig& category,
                             const std::vector<JointShapeData>& dataset,
                             const JointTrainConfig& cfg) {
    if (dataset.empty()) throw std::runtime_error("train_joint: empty dataset");
    for (size_t k = 0; k < category.slots(); ++k) {
        std::string probe = "enc_B/" + category.part_labels[k] + "/sa0/w0";
        bool any_present = false;
        for (const auto& s : dataset) any_present = any_present || s.parts[k].present;
        if (any_present && !store.has(probe))
            throw std::runtime_error("train_joint: missing pretrained encoder " + probe);
    }

    JointTrainResult result;
    Rng rng(cfg.seed ^ 0x70a1);

    // ---- stage 2: decoder only, frozen encoders, codes cached
    std::vector<Arr<real>> codes_cache;
    for (const auto& shape : dataset)
        codes_cache.push_back(joint_codes_row(
            compute_joint_codes(store, category, shape, cfg.spec_b, cfg.spec_c)));

    AdamState<real> adam2;
    adam2.lr = real(cfg.lr);
    for (int epoch = 0; epoch < cfg.stage2_epochs; ++epoch) {
        size_t want = schedule_count(cfg.schedule_base, cfg.schedule_cap, cfg.schedule_period,
                                     epoch);
        double total = 0;
        size_t steps = 0;
        for (size_t s = 0; s < dataset.size(); ++s) {
            for (int inner = 0; inner < cfg.inner_steps; ++inner) {
                auto batch = draw_batch(dataset[s].samples.points.size(), want, rng);
                std::vector<Vec3> pts;
                std::vector<real> labels;
                pts.reserve(batch.size());
                for (int i : batch) {
                    pts.push_back(dataset[s].samples.points[i]);
                    labels.push_back(real(dataset[s].samples.labels[i]));
                }
                RTape tape;
                RVar out = decoder_forward(tape, store, tape.constant(codes_cache[s]),
                                           tape.constant(points_to_arr(pts)), true);
                RVar loss = loss_mse(tape, out, labels);
                tape.backward(loss);
                adam_step(store, tape.param_grads(), adam2);
                total += double(tape.scalar_val(loss));
                ++steps;
            }
        }
        result.stage2_losses.push_back(total / double(steps));
        if (cfg.verbose)
            std::printf("joint stage2 epoch %d: pts %zu mse %.6f\n", epoch, want,
                        result.stage2_losses.back());
    }

    // ---- stage 3: encoders + decoder under L_mse + alpha * L_match
    AdamState<real> adam3;
    adam3.lr = real(cfg.lr);
    for (int epoch = 0; epoch < cfg.stage3_epochs; ++epoch) {
        size_t want = schedule_count(cfg.schedule_base, cfg.schedule_cap, cfg.schedule_period,
                                     cfg.stage2_epochs + epoch);
        double total = 0;
        size_t steps = 0;
        for (size_t s = 0; s < dataset.size(); ++s) {
            const JointShapeData& shape = dataset[s];
            for (int inner = 0; inner < cfg.stage3_inner_steps; ++inner) {
                RTape tape;
                // codes on tape so encoder gradients flow
                RVar codes_row{-1};
                for (size_t k = 0; k < category.slots(); ++k) {
                    RVar code{-1};
                    if (!shape.parts[k].present) {
                        code = tape.constant(Arr<real>({1, kJointCodeWidth}));
                    } else {
                        RVar fb = pointnet_forward(tape, store,
                                                   "enc_B/" + category.part_labels[k], cfg.spec_b,
                                                   shape.parts[k].cloud, true);
                        RVar fc = pointnet_forward(tape, store,
                                                   "enc_C/" + category.part_labels[k], cfg.spec_c,
                                                   shape.parts[k].near_joint, true);
                        code = tape.concat_cols(fb, fc);
                    }
                    codes_row = codes_row.valid() ? tape.concat_cols(codes_row, code) : code;
                }

                auto batch = draw_batch(shape.samples.points.size(), want, rng);
                std::vector<Vec3> pts;
                std::vector<real> labels;
                for (int i : batch) {
                    pts.push_back(shape.samples.points[i]);
                    labels.push_back(real(shape.samples.labels[i]));
                }
                RVar out = decoder_forward(tape, store, codes_row, tape.constant(points_to_arr(pts)),
                                           true);
                RVar loss = loss_mse(tape, out, labels);

                if (cfg.loss.alpha > 0 && !shape.boundary.points.empty()) {
                    auto probes = draw_batch(shape.boundary.points.size(),
                                             std::min(cfg.match_batch, shape.boundary.points.size()),
                                             rng);
                    std::vector<Vec3> plus, minus;
                    for (int i : probes) {
                        const Vec3& p = shape.boundary.points[i];
                        const Vec3& nrm = shape.boundary.normals[i];
                        plus.push_back(p + nrm * cfg.loss.lambda);
                        minus.push_back(p - nrm * cfg.loss.lambda);
                    }
                    RVar f_plus = decoder_forward(tape, store, codes_row,
                                                  tape.constant(points_to_arr(plus)), true);
                    RVar f_minus = decoder_forward(tape, store, codes_row,
                                                   tape.constant(points_to_arr(minus)), true);
                    RVar match = loss_match(tape, f_plus, f_minus);
                    loss = tape.add(loss, tape.scale(match, real(cfg.loss.alpha)));
                }

                tape.backward(loss);
                adam_step(store, tape.param_grads(), adam3);
                total += double(tape.scalar_val(loss));
                ++steps;
            }
        }
        result.stage3_losses.push_back(total / double(steps));
        if (cfg.verbose)
            std::printf("joint stage3 epoch %d: pts %zu loss %.6f\n", epoch, want,
                        result.stage3_losses.back());
    }
    return result;
}

}  // namespace coalesce
