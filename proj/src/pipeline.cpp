#include "coalesce/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace coalesce {

// ---- config -----------------------------------------------------------------

void apply_config_entry(PipelineConfig& cfg, const std::string& key, const std::string& value) {
    auto as_double = [&] { return std::stod(value); };
    auto as_int = [&] { return std::stoi(value); };
    auto as_size = [&] { return size_t(std::stoull(value)); };
    auto as_bool = [&] { return value == "true" || value == "1" || value == "yes"; };

    if (key == "category") {
        if (value == "chairlike") cfg.category = chairlike_category();
        else if (value == "muglike") cfg.category = muglike_category();
        else throw std::runtime_error("unknown category: " + value);
    } else if (key == "data_dir") cfg.data_dir = value;
    else if (key == "align_ckpt") cfg.align_ckpt = value;
    else if (key == "joint_ckpt") cfg.joint_ckpt = value;
    else if (key == "tau") cfg.category.tau = as_double();
    else if (key == "sample_grid") cfg.sample_grid = uint32_t(as_int());
    else if (key == "field_grid") cfg.field_grid = uint32_t(as_int());
    else if (key == "shape_samples") cfg.shape_samples = as_size();
    else if (key == "train_samples") cfg.train_samples = as_size();
    else if (key == "boundary_points") cfg.boundary_points = as_size();
    else if (key == "seed") cfg.seed = std::stoull(value);
    else if (key == "align_epochs") cfg.align_epochs = as_int();
    else if (key == "align_batch") cfg.align_batch = as_int();
    else if (key == "align_lr") cfg.align_lr = as_double();
    else if (key == "align_train_encoder") cfg.align_train_encoder = as_bool();
    else if (key == "emd_points") cfg.emd_points = as_size();
    else if (key == "pretrain_epochs") cfg.pretrain_epochs = as_int();
    else if (key == "stage2_epochs") cfg.stage2_epochs = as_int();
    else if (key == "stage3_epochs") cfg.stage3_epochs = as_int();
    else if (key == "joint_lr") cfg.joint_lr = as_double();
    else if (key == "alpha") cfg.alpha = as_double();
    else if (key == "lambda") cfg.lambda = as_double();
    else if (key == "schedule_base") cfg.schedule_base = as_size();
    else if (key == "schedule_cap") cfg.schedule_cap = as_size();
    else if (key == "schedule_period") cfg.schedule_period = as_int();
    else if (key == "inner_steps") cfg.inner_steps = as_int();
    else if (key == "stage3_inner_steps") cfg.stage3_inner_steps = as_int();
    else if (key == "match_batch") cfg.match_batch = as_size();
    else if (key == "refine_iters") cfg.refine.iterations = as_int();
    else if (key == "refine_lr_transform") cfg.refine.lr_transform = as_double();
    else if (key == "refine_lr_decoder") cfg.refine.lr_decoder = as_double();
    else if (key == "refine_probes") cfg.refine.probe_count = as_size();
    else if (key == "refine_enabled") cfg.refine_enabled = as_bool();
    else if (key == "chamfer_samples") cfg.chamfer_samples = as_size();
    else if (key == "chamfer_squared") cfg.chamfer_squared = as_bool();
    else if (key == "verbose") cfg.verbose = as_bool();
    else throw std::runtime_error("unknown config key: " + key);
}

PipelineConfig load_config(const std::string& path) {
    PipelineConfig cfg;
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config: " + path);
    std::string line;
    int line_no = 0;
    std::vector<std::string> keys;
    while (std::getline(in, line)) {
        ++line_no;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        size_t eq = line.find('=');
        if (eq == std::string::npos) continue;
        auto trim = [](std::string s) {
            size_t a = s.find_first_not_of(" \t\r");
            size_t b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty()) continue;
        try {
            apply_config_entry(cfg, key, value);
        } catch (const std::exception& e) {
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
        keys.push_back(key);
    }
    // environment overrides: COALESCE_<KEY>
    for (const char* key : {"category", "data_dir", "align_ckpt", "joint_ckpt", "tau",
                            "sample_grid", "field_grid", "shape_samples", "train_samples",
                            "boundary_points", "seed", "align_epochs", "align_batch", "align_lr",
                            "align_train_encoder", "emd_points", "pretrain_epochs",
                            "stage2_epochs", "stage3_epochs", "joint_lr", "alpha", "lambda",
                            "schedule_base", "schedule_cap", "schedule_period", "inner_steps", "stage3_inner_steps",
                            "match_batch", "refine_iters", "refine_lr_transform",
                            "refine_lr_decoder", "refine_probes", "refine_enabled",
                            "chamfer_samples", "chamfer_squared", "verbose"}) {
        std::string env_name = "COALESCE_";
        for (const char* p = key; *p; ++p) env_name += char(std::toupper(*p));
        if (const char* env = std::getenv(env_name.c_str())) apply_config_entry(cfg, key, env);
    }
    cfg.category.validate();
    return cfg;
}

uint64_t fnv1a_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot hash missing file: " + path);
    uint64_t h = 1469598103934665603ull;
    char buf[4096];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            h ^= uint8_t(buf[i]);
            h *= 1099511628211ull;
        }
        if (!in) break;
    }
    return h;
}

std::string config_hash(const std::string& path) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", (unsigned long long)fnv1a_file(path));
    return buf;
}

// ---- synthetic dataset I/O ----------------------------------------------------

std::vector<std::string> generate_synthetic(const std::string& category, size_t count,
                                            uint64_t seed, const std::string& out_dir) {
    CategoryConfig cat = category == "muglike" ? muglike_category() : chairlike_category();
    if (category != "muglike" && category != "chairlike")
        throw std::runtime_error("unknown synthetic category: " + category);
    fs::create_directories(out_dir);

    std::vector<std::string> dirs;
    json manifest;
    manifest["category"] = cat.name;
    manifest["count"] = count;
    manifest["seed"] = seed;
    for (size_t i = 0; i < count; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "shape_%04zu", i);
        fs::path dir = fs::path(out_dir) / name;
        fs::create_directories(dir);

        ShapeParts shape = synth_shape(cat, seed * 1000003ull + i);
        std::vector<TriMesh> present;
        for (const auto& part : shape.parts)
            if (!part.empty()) present.push_back(part);
        save_mesh_groups(present, (dir / "shape.obj").string());

        json bounds;
        for (const auto& [label, polys] : shape.bounds) {
            json jpolys = json::array();
            for (const auto& pl : polys) {
                json jp;
                jp["closed"] = pl.closed;
                json pts = json::array();
                for (const auto& p : pl.points) pts.push_back({p.x, p.y, p.z});
                jp["points"] = pts;
                jpolys.push_back(jp);
            }
            bounds[label] = jpolys;
        }
        std::ofstream((dir / "boundaries.json").string()) << bounds.dump(1) << "\n";

        json meta;
        meta["category"] = cat.name;
        meta["seed"] = seed * 1000003ull + i;
        json labels = json::array();
        for (const auto& part : shape.parts)
            if (!part.empty()) labels.push_back(part.label);
        meta["labels"] = labels;
        std::ofstream((dir / "meta.json").string()) << meta.dump(1) << "\n";

        manifest["shapes"].push_back(name);
        dirs.push_back(dir.string());
    }
    std::ofstream(fs::path(out_dir) / "manifest.json") << manifest.dump(1) << "\n";
    return dirs;
}

std::vector<std::string> dataset_shape_dirs(const std::string& data_dir) {
    std::vector<std::string> dirs;
    for (const auto& entry : fs::directory_iterator(data_dir))
        if (entry.is_directory() && fs::exists(entry.path() / "shape.obj"))
            dirs.push_back(entry.path().string());
    std::sort(dirs.begin(), dirs.end());
    if (dirs.empty()) throw std::runtime_error("no shapes found under " + data_dir);
    return dirs;
}

namespace {

std::map<std::string, std::vector<Polyline>> load_boundaries(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open boundaries: " + path);
    json j;
    in >> j;
    std::map<std::string, std::vector<Polyline>> out;
    for (auto& [label, jpolys] : j.items()) {
        for (auto& jp : jpolys) {
            Polyline pl;
            pl.closed = jp.value("closed", false);
            for (auto& pt : jp["points"]) pl.points.push_back({pt[0], pt[1], pt[2]});
            out[label].push_back(std::move(pl));
        }
    }
    return out;
}

}  // namespace

// ---- preprocessing ---------------------------------------------------------------

PrepShape prepare_shape(const PipelineConfig& cfg, const std::string& shape_dir) {
    PrepShape prep;
    prep.shape_id = fs::path(shape_dir).filename().string();

    auto groups = load_mesh_groups((fs::path(shape_dir) / "shape.obj").string());
    auto bounds = load_boundaries((fs::path(shape_dir) / "boundaries.json").string());

    prep.shape_mesh = merge_meshes(groups);
    const double diameter = prep.shape_mesh.bounds().diagonal();

    // one Poisson-disk sampling over the whole shape, split back into parts
    PointCloud shape_cloud =
        sample_surface(prep.shape_mesh, cfg.shape_samples, SampleMode::PoissonDisk, cfg.seed ^ 0x5a);
    // face index -> part slot
    std::vector<int> face_slot(prep.shape_mesh.triangle_count());
    {
        size_t off = 0;
        for (const auto& g : groups) {
            int slot = cfg.category.slot_of(g.label);
            for (size_t f = 0; f < g.triangle_count(); ++f) face_slot[off + f] = slot;
            off += g.triangle_count();
        }
    }

    prep.parts.resize(cfg.category.slots());
    std::vector<PointCloud> slot_clouds(cfg.category.slots());
    for (size_t i = 0; i < shape_cloud.size(); ++i) {
        int slot = face_slot[shape_cloud.source_face[i]];
        if (slot < 0) continue;
        slot_clouds[slot].points.push_back(shape_cloud.points[i]);
        slot_clouds[slot].normals.push_back(shape_cloud.normals[i]);
        slot_clouds[slot].source_face.push_back(shape_cloud.source_face[i]);
    }

    std::vector<Polyline> all_bounds;
    for (const auto& g : groups) {
        int slot = cfg.category.slot_of(g.label);
        if (slot < 0) throw std::runtime_error("part label '" + g.label + "' not in category " +
                                               cfg.category.name);
        PrepPart& part = prep.parts[slot];
        part.present = true;
        part.label = g.label;
        part.boundary = bounds.count(g.label) ? bounds.at(g.label) : std::vector<Polyline>{};
        for (const auto& pl : part.boundary) all_bounds.push_back(pl);

        part.eroded_mesh = erode_part(g, part.boundary, {cfg.category.tau}, diameter);
        PointCloud eroded =
            erode_cloud(slot_clouds[slot], part.boundary, {cfg.category.tau}, diameter);
        if (eroded.size() == 0)
            throw std::runtime_error("part '" + g.label + "' lost every sample to erosion");
        part.eroded_cloud = resample_cloud(eroded, kPartPoints, cfg.seed ^ (0x77 + slot));

        // near-joint points: closest to the pre-erosion segmentation boundary
        std::vector<std::pair<double, int>> by_dist;
        for (size_t i = 0; i < part.eroded_cloud.size(); ++i)
            by_dist.push_back({polyline_distance(part.eroded_cloud.points[i], part.boundary),
                               int(i)});
        std::sort(by_dist.begin(), by_dist.end());
        for (size_t i = 0; i < kNearJointPoints && i < by_dist.size(); ++i)
            part.near_joint.push_back(by_dist[i].second);

        auto [norm_cloud, xf] = normalize_cloud(part.eroded_cloud);
        part.normalized_cloud = std::move(norm_cloud);
        part.gt.s = 1.0 / xf.scale;
        part.gt.t = -xf.offset;
    }

    // occupancy: union of the parts on a shared grid
    prep.shape_grid = make_grid(prep.shape_mesh.bounds(),
                                {cfg.sample_grid, cfg.sample_grid, cfg.sample_grid});
    OccupancyGrid eroded_grid = prep.shape_grid;
    for (const auto& g : groups) {
        OccupancyGrid part_grid = prep.shape_grid;
        part_grid.bits.assign(part_grid.bits.size(), 0);
        voxelize_into(g, part_grid);
        prep.shape_grid = grid_or(prep.shape_grid, part_grid);

        // eroded interior: part cells beyond tau * diameter of the boundary
        int slot = cfg.category.slot_of(g.label);
        const auto& boundary = prep.parts[slot].boundary;
        const double radius = cfg.category.tau * diameter;
        for (uint32_t z = 0; z < part_grid.res[2]; ++z)
            for (uint32_t y = 0; y < part_grid.res[1]; ++y)
                for (uint32_t x = 0; x < part_grid.res[0]; ++x)
                    if (part_grid.get(x, y, z) &&
                        polyline_distance(part_grid.cell_center(x, y, z), boundary) < radius)
                        part_grid.set(x, y, z, false);
        eroded_grid = grid_or(eroded_grid, part_grid);
    }
    prep.joint_volume = build_joint_volume(prep.shape_grid, eroded_grid, 5);

    prep.samples = sample_training_points(prep.shape_mesh, prep.shape_grid, prep.joint_volume,
                                          cfg.train_samples, {0.8, 0.1, 0.1}, cfg.seed ^ 0x3c);

    std::vector<PointCloud> eroded_clouds;
    for (const auto& part : prep.parts)
        eroded_clouds.push_back(part.present ? part.eroded_cloud : PointCloud{});
    prep.boundary_set = select_joint_boundary(eroded_clouds, all_bounds, cfg.boundary_points);
    return prep;
}

namespace {

Arr<real> vecs_to_arr(const std::vector<Vec3>& pts) {
    Arr<real> a({pts.size(), 3});
    for (size_t i = 0; i < pts.size(); ++i)
        for (int c = 0; c < 3; ++c) a.v[i * 3 + c] = real(pts[i][c]);
    return a;
}

std::vector<Vec3> arr_to_vecs(const Arr<real>& a) {
    std::vector<Vec3> out(a.rows());
    for (size_t i = 0; i < a.rows(); ++i)
        out[i] = {double(a.at(i, 0)), double(a.at(i, 1)), double(a.at(i, 2))};
    return out;
}

}  // namespace

PrepShape prepare_shape_cached(const PipelineConfig& cfg, const std::string& shape_dir) {
    char tag[96];
    std::snprintf(tag, sizeof(tag), "prep_g%u_s%zu_n%zu_k%zu_seed%llu", cfg.sample_grid,
                  cfg.train_samples, cfg.shape_samples, cfg.boundary_points,
                  (unsigned long long)cfg.seed);
    fs::path base = fs::path(shape_dir) / tag;
    fs::path archive = base;
    archive += ".clsc";

    if (fs::exists(archive)) {
        PrepShape prep;
        prep.shape_id = fs::path(shape_dir).filename().string();
        auto groups = load_mesh_groups((fs::path(shape_dir) / "shape.obj").string());
        prep.shape_mesh = merge_meshes(groups);
        auto bounds = load_boundaries((fs::path(shape_dir) / "boundaries.json").string());

        ParamStore<real> ar;
        load_checkpoint(archive.string(), ar);
        prep.parts.resize(cfg.category.slots());
        for (size_t slot = 0; slot < cfg.category.slots(); ++slot) {
            std::string p = "part" + std::to_string(slot);
            if (!ar.has(p + "/points")) continue;
            PrepPart& part = prep.parts[slot];
            part.present = true;
            part.label = cfg.category.part_labels[slot];
            part.boundary = bounds.count(part.label) ? bounds.at(part.label)
                                                     : std::vector<Polyline>{};
            part.eroded_cloud.points = arr_to_vecs(ar.at(p + "/points"));
            part.eroded_cloud.normals = arr_to_vecs(ar.at(p + "/normals"));
            part.eroded_cloud.source_face.assign(part.eroded_cloud.size(), 0);
            for (real v : ar.at(p + "/near").v) part.near_joint.push_back(int(v));
            const auto& gt = ar.at(p + "/gt");
            part.gt.s = double(gt.v[0]);
            part.gt.t = {double(gt.v[1]), double(gt.v[2]), double(gt.v[3])};
            auto [norm_cloud, xf] = normalize_cloud(part.eroded_cloud);
            part.normalized_cloud = std::move(norm_cloud);
            for (const auto& g : groups)
                if (cfg.category.slot_of(g.label) == int(slot))
                    part.eroded_mesh = erode_part(g, part.boundary, {cfg.category.tau},
                                                  prep.shape_mesh.bounds().diagonal());
        }
        prep.samples.points = arr_to_vecs(ar.at("samples/points"));
        for (real v : ar.at("samples/labels").v) prep.samples.labels.push_back(v > 0.5f);
        const auto& counts = ar.at("samples/counts");
        prep.samples.joint_count = size_t(counts.v[0]);
        prep.samples.near_count = size_t(counts.v[1]);
        prep.samples.far_count = size_t(counts.v[2]);
        prep.boundary_set.points = arr_to_vecs(ar.at("nj/points"));
        prep.boundary_set.normals = arr_to_vecs(ar.at("nj/normals"));
        for (real v : ar.at("nj/slots").v) prep.boundary_set.part_slot.push_back(int(v));
        prep.shape_grid = load_grid((base.string() + "_shape.grid"));
        prep.joint_volume = load_grid((base.string() + "_joint.grid"));
        return prep;
    }

    PrepShape prep = prepare_shape(cfg, shape_dir);
    ParamStore<real> ar;
    for (size_t slot = 0; slot < prep.parts.size(); ++slot) {
        const PrepPart& part = prep.parts[slot];
        if (!part.present) continue;
        std::string p = "part" + std::to_string(slot);
        ar.params[p + "/points"] = vecs_to_arr(part.eroded_cloud.points);
        ar.params[p + "/normals"] = vecs_to_arr(part.eroded_cloud.normals);
        Arr<real> near({part.near_joint.size()});
        for (size_t i = 0; i < part.near_joint.size(); ++i) near.v[i] = real(part.near_joint[i]);
        ar.params[p + "/near"] = std::move(near);
        ar.params[p + "/gt"] =
            Arr<real>({4}, {real(part.gt.s), real(part.gt.t.x), real(part.gt.t.y),
                            real(part.gt.t.z)});
    }
    ar.params["samples/points"] = vecs_to_arr(prep.samples.points);
    Arr<real> labels({prep.samples.labels.size()});
    for (size_t i = 0; i < labels.size(); ++i) labels.v[i] = real(prep.samples.labels[i]);
    ar.params["samples/labels"] = std::move(labels);
    ar.params["samples/counts"] =
        Arr<real>({3}, {real(prep.samples.joint_count), real(prep.samples.near_count),
                        real(prep.samples.far_count)});
    ar.params["nj/points"] = vecs_to_arr(prep.boundary_set.points);
    ar.params["nj/normals"] = vecs_to_arr(prep.boundary_set.normals);
    Arr<real> slots({prep.boundary_set.part_slot.size()});
    for (size_t i = 0; i < slots.size(); ++i) slots.v[i] = real(prep.boundary_set.part_slot[i]);
    ar.params["nj/slots"] = std::move(slots);
    save_checkpoint(archive.string(), ar);
    save_grid(prep.shape_grid, base.string() + "_shape.grid");
    save_grid(prep.joint_volume, base.string() + "_joint.grid");
    return prep;
}

std::vector<AlignSample> align_dataset(const std::vector<PrepShape>& shapes) {
    std::vector<AlignSample> out;
    for (const auto& prep : shapes) {
        AlignSample sample;
        for (const auto& part : prep.parts) {
            AlignPart ap;
            ap.present = part.present;
            if (part.present) {
                ap.cloud = part.normalized_cloud.points;
                ap.gt = part.gt;
            }
            sample.parts.push_back(std::move(ap));
        }
        out.push_back(std::move(sample));
    }
    return out;
}

std::vector<JointShapeData> joint_dataset(const std::vector<PrepShape>& shapes) {
    std::vector<JointShapeData> out;
    for (const auto& prep : shapes) {
        JointShapeData shape;
        for (const auto& part : prep.parts) {
            JointPartData jp;
            jp.present = part.present;
            jp.label = part.label;
            if (part.present) {
                jp.cloud = part.eroded_cloud.points;
                for (int i : part.near_joint) jp.near_joint.push_back(part.eroded_cloud.points[i]);
            }
            shape.parts.push_back(std::move(jp));
        }
        shape.samples = prep.samples;
        shape.boundary = prep.boundary_set;
        out.push_back(std::move(shape));
    }
    return out;
}

// ---- chamfer -------------------------------------------------------------------

namespace {

struct KdTree {
    struct Node {
        Vec3 p;
        int left = -1, right = -1;
        uint8_t axis = 0;
    };
    std::vector<Node> nodes;
    int root = -1;

    explicit KdTree(std::vector<Vec3> pts) {
        nodes.reserve(pts.size());
        std::vector<int> idx(pts.size());
        std::iota(idx.begin(), idx.end(), 0);
        root = build(pts, idx, 0, int(pts.size()), 0);
    }
    int build(std::vector<Vec3>& pts, std::vector<int>& idx, int lo, int hi, int depth) {
        if (lo >= hi) return -1;
        int axis = depth % 3;
        int mid = (lo + hi) / 2;
        std::nth_element(idx.begin() + lo, idx.begin() + mid, idx.begin() + hi,
                         [&](int a, int b) { return pts[a][axis] < pts[b][axis]; });
        int id = int(nodes.size());
        nodes.push_back({pts[idx[mid]], -1, -1, uint8_t(axis)});
        int l = build(pts, idx, lo, mid, depth + 1);
        int r = build(pts, idx, mid + 1, hi, depth + 1);
        nodes[id].left = l;
        nodes[id].right = r;
        return id;
    }
    void nearest(int node, const Vec3& q, double& best) const {
        if (node < 0) return;
        const Node& n = nodes[node];
        best = std::min(best, dist2(q, n.p));
        double delta = q[n.axis] - n.p[n.axis];
        int near = delta < 0 ? n.left : n.right;
        int far = delta < 0 ? n.right : n.left;
        nearest(near, q, best);
        if (delta * delta < best) nearest(far, q, best);
    }
    double nearest2(const Vec3& q) const {
        double best = std::numeric_limits<double>::max();
        nearest(root, q, best);
        return best;
    }
};

uint64_t mesh_content_hash(const TriMesh& m) {
    uint64_t h = 1469598103934665603ull;
    auto mix = [&](const void* data, size_t bytes) {
        const uint8_t* b = static_cast<const uint8_t*>(data);
        for (size_t i = 0; i < bytes; ++i) {
            h ^= b[i];
            h *= 1099511628211ull;
        }
    };
    for (const auto& v : m.vertices) mix(&v, sizeof(v));
    for (const auto& t : m.triangles) mix(t.data(), sizeof(t));
    return h;
}

}  // namespace

double chamfer(const TriMesh& a, const TriMesh& b, size_t n, uint64_t seed, bool squared) {
    if (a.empty() || b.empty()) throw std::runtime_error("chamfer: empty mesh");
    // per-mesh content seeds keep the metric symmetric in its arguments
    PointCloud sa = sample_surface(a, n, SampleMode::Uniform, seed ^ mesh_content_hash(a));
    PointCloud sb = sample_surface(b, n, SampleMode::Uniform, seed ^ mesh_content_hash(b));
    KdTree ta(sa.points), tb(sb.points);
    double acc_ab = 0, acc_ba = 0;
    for (const auto& p : sa.points) {
        double d2 = tb.nearest2(p);
        acc_ab += squared ? d2 : std::sqrt(d2);
    }
    for (const auto& p : sb.points) {
        double d2 = ta.nearest2(p);
        acc_ba += squared ? d2 : std::sqrt(d2);
    }
    return 1e3 * 0.5 * (acc_ab / double(n) + acc_ba / double(n));
}

double chamfer(const PipelineConfig& cfg, const TriMesh& a, const TriMesh& b) {
    return chamfer(a, b, cfg.chamfer_samples, cfg.seed ^ 0xc4a, cfg.chamfer_squared);
}

// ---- perturbations -----------------------------------------------------------------

double sine_phase(uint64_t seed) {
    Rng rng(seed ^ 0x51e);
    return rng.uniform(-3.14159265358979323846, 3.14159265358979323846);
}

void perturb_sine_mesh(TriMesh& mesh, const PerturbConfig& cfg, double phase) {
    for (auto& v : mesh.vertices)
        v.y += cfg.sine_amplitude * std::sin(cfg.sine_frequency * v.z + phase);
    mesh.compute_vertex_normals();
}

void perturb_sine_polylines(std::vector<Polyline>& polys, const PerturbConfig& cfg, double phase) {
    for (auto& pl : polys)
        for (auto& p : pl.points)
            p.y += cfg.sine_amplitude * std::sin(cfg.sine_frequency * p.z + phase);
}

SimilarityTransform sample_similarity(const PerturbConfig& cfg, uint64_t seed) {
    Rng rng(seed ^ 0x5ca1e);
    SimilarityTransform xf;
    xf.s = rng.uniform(cfg.scale_lo, cfg.scale_hi);
    xf.t = {rng.uniform(cfg.translate_lo, cfg.translate_hi),
            rng.uniform(cfg.translate_lo, cfg.translate_hi),
            rng.uniform(cfg.translate_lo, cfg.translate_hi)};
    return xf;
}

std::vector<std::string> perturb_dataset(const std::string& data_dir, const std::string& out_dir,
                                         const std::string& mode, const PerturbConfig& pcfg,
                                         uint64_t seed) {
    if (mode != "sine" && mode != "similarity" && mode != "none")
        throw std::runtime_error("unknown perturbation mode: " + mode);
    fs::create_directories(out_dir);
    std::vector<std::string> out_dirs;
    size_t shape_index = 0;
    for (const auto& shape_dir : dataset_shape_dirs(data_dir)) {
        fs::path src(shape_dir);
        fs::path dst = fs::path(out_dir) / src.filename();
        fs::create_directories(dst);

        auto groups = load_mesh_groups((src / "shape.obj").string());
        auto bounds = load_boundaries((src / "boundaries.json").string());
        uint64_t shape_seed = seed * 2654435761ull + shape_index;

        if (mode == "sine") {
            double phase = sine_phase(shape_seed);
            for (auto& g : groups) perturb_sine_mesh(g, pcfg, phase);
            for (auto& [label, polys] : bounds) perturb_sine_polylines(polys, pcfg, phase);
        } else if (mode == "similarity") {
            SimilarityTransform xf = sample_similarity(pcfg, shape_seed);
            for (auto& g : groups) g = apply_transform(g, xf);
            for (auto& [label, polys] : bounds)
                for (auto& pl : polys)
                    for (auto& p : pl.points) p = xf.apply(p);
        }

        save_mesh_groups(groups, (dst / "shape.obj").string());
        json jb;
        for (const auto& [label, polys] : bounds) {
            json jpolys = json::array();
            for (const auto& pl : polys) {
                json jp;
                jp["closed"] = pl.closed;
                json pts = json::array();
                for (const auto& p : pl.points) pts.push_back({p.x, p.y, p.z});
                jp["points"] = pts;
                jpolys.push_back(jp);
            }
            jb[label] = jpolys;
        }
        std::ofstream(dst / "boundaries.json") << jb.dump(1) << "\n";
        if (fs::exists(src / "meta.json")) fs::copy_file(src / "meta.json", dst / "meta.json",
                                                         fs::copy_options::overwrite_existing);
        out_dirs.push_back(dst.string());
        ++shape_index;
    }
    return out_dirs;
}

// ---- training entry points ------------------------------------------------------------

namespace {

std::vector<PrepShape> prep_all(const PipelineConfig& cfg,
                                const std::vector<std::string>& shape_dirs) {
    std::vector<PrepShape> shapes;
    for (const auto& dir : shape_dirs) {
        if (cfg.verbose) std::printf("prep %s\n", dir.c_str());
        shapes.push_back(prepare_shape_cached(cfg, dir));
    }
    return shapes;
}

}  // namespace

void run_train_align(const PipelineConfig& cfg, const std::vector<std::string>& shape_dirs,
                     const std::string& out_ckpt) {
    auto shapes = prep_all(cfg, shape_dirs);
    auto dataset = align_dataset(shapes);

    ParamStore<real> store;
    Rng rng(cfg.seed ^ 0xa117);
    init_pointnet(store, "enc_A", pointnet_a_spec(), rng);
    init_align_regressor(store, cfg.category.slots(), rng);

    AlignTrainConfig tc;
    tc.epochs = cfg.align_epochs;
    tc.batch = cfg.align_batch;
    tc.lr = cfg.align_lr;
    tc.train_encoder = cfg.align_train_encoder;
    tc.emd_points = cfg.emd_points;
    tc.seed = cfg.seed;
    tc.verbose = cfg.verbose;
    auto losses = train_alignment(store, dataset, tc);
    if (cfg.verbose && !losses.empty())
        std::printf("align: emd %.5f -> %.5f\n", losses.front(), losses.back());
    save_checkpoint(out_ckpt, store);
}

void run_pretrain_encoders(const PipelineConfig& cfg, const std::vector<std::string>& shape_dirs,
                           const std::string& out_ckpt) {
    auto shapes = prep_all(cfg, shape_dirs);
    auto dataset = joint_dataset(shapes);

    ParamStore<real> store;
    Rng rng(cfg.seed ^ 0xb0b);
    for (const auto& label : cfg.category.part_labels) {
        init_pointnet(store, "enc_B/" + label, pointnet_b_spec(), rng);
        init_pointnet(store, "enc_C/" + label, pointnet_c_spec(), rng);
    }
    PretrainConfig pc;
    pc.epochs = cfg.pretrain_epochs;
    pc.seed = cfg.seed;
    pc.verbose = cfg.verbose;
    auto losses = pretrain_encoders(store, cfg.category, dataset, pc);
    if (cfg.verbose && !losses.empty())
        std::printf("pretrain: chamfer %.5f -> %.5f\n", losses.front(), losses.back());
    save_checkpoint(out_ckpt, store);
}

void run_train_joint(const PipelineConfig& cfg, const std::vector<std::string>& shape_dirs,
                     const std::string& pretrain_ckpt, const std::string& out_ckpt) {
    if (!checkpoint_exists(pretrain_ckpt))
        throw std::runtime_error("missing pretrain checkpoint: " + pretrain_ckpt);
    auto shapes = prep_all(cfg, shape_dirs);
    auto dataset = joint_dataset(shapes);

    ParamStore<real> store;
    load_checkpoint(pretrain_ckpt, store);
    // drop the reconstruction decoders; they were pretraining scaffolding
    for (auto it = store.params.begin(); it != store.params.end();)
        it = it->first.rfind("pre_dec/", 0) == 0 ? store.params.erase(it) : std::next(it);
    Rng rng(cfg.seed ^ 0xdec);
    init_decoder(store, cfg.category.slots(), rng);

    JointTrainConfig jc;
    jc.stage2_epochs = cfg.stage2_epochs;
    jc.stage3_epochs = cfg.stage3_epochs;
    jc.lr = cfg.joint_lr;
    jc.loss.alpha = cfg.alpha;
    jc.loss.lambda = cfg.lambda;
    jc.schedule_base = cfg.schedule_base;
    jc.schedule_cap = cfg.schedule_cap;
    jc.schedule_period = cfg.schedule_period;
    jc.inner_steps = cfg.inner_steps;
    jc.stage3_inner_steps = cfg.stage3_inner_steps;
    jc.match_batch = cfg.match_batch;
    jc.seed = cfg.seed;
    jc.verbose = cfg.verbose;
    auto result = train_joint(store, cfg.category, dataset, jc);
    if (cfg.verbose && !result.stage2_losses.empty())
        std::printf("joint: stage2 %.5f -> %.5f\n", result.stage2_losses.front(),
                    result.stage2_losses.back());
    save_checkpoint(out_ckpt, store);
}

// ---- assembly ----------------------------------------------------------------------------

namespace {

// evaluation mask: field nodes near the transformed segmentation boundaries
std::vector<char> boundary_mask(const ScalarField& field,
                                const std::vector<std::vector<Polyline>>& bounds, double reach) {
    std::vector<char> mask(field.values.size(), 0);
    int k = int(std::ceil(reach / field.cell)) + 1;
    auto mark = [&](const Vec3& p) {
        int cx = int(std::floor((p.x - field.origin.x) / field.cell));
        int cy = int(std::floor((p.y - field.origin.y) / field.cell));
        int cz = int(std::floor((p.z - field.origin.z) / field.cell));
        for (int dz = -k; dz <= k; ++dz)
            for (int dy = -k; dy <= k; ++dy)
                for (int dx = -k; dx <= k; ++dx) {
                    if (std::abs(dx) + std::abs(dy) + std::abs(dz) > k + k / 2) continue;
                    int x = cx + dx, y = cy + dy, z = cz + dz;
                    if (x < 0 || y < 0 || z < 0 || x >= int(field.res[0]) ||
                        y >= int(field.res[1]) || z >= int(field.res[2]))
                        continue;
                    mask[field.index(x, y, z)] = 1;
                }
    };
    for (const auto& polys : bounds)
        for (const auto& pl : polys) {
            for (size_t i = 0; i + 1 < pl.points.size(); ++i) {
                double len = dist(pl.points[i], pl.points[i + 1]);
                int steps = std::max(1, int(std::ceil(len / (field.cell * 0.5))));
                for (int s = 0; s <= steps; ++s)
                    mark(pl.points[i] + (pl.points[i + 1] - pl.points[i]) * (double(s) / steps));
            }
            if (pl.closed && pl.points.size() > 1) {
                double len = dist(pl.points.back(), pl.points.front());
                int steps = std::max(1, int(std::ceil(len / (field.cell * 0.5))));
                for (int s = 0; s <= steps; ++s)
                    mark(pl.points.back() +
                         (pl.points.front() - pl.points.back()) * (double(s) / steps));
            }
        }
    return mask;
}

ScalarField evaluate_field(const PipelineConfig& cfg, const ParamStore<real>& joint_store,
                           const std::vector<PartCode>& codes,
                           const std::vector<std::vector<Polyline>>& bounds, const Aabb& box) {
    ScalarField field;
    const uint32_t res = cfg.field_grid;
    field.res = {res, res, res};
    Vec3 ext = box.extent();
    field.cell = std::max({ext.x, ext.y, ext.z, 1e-9}) / double(res - 3);
    field.origin = box.center() - Vec3{field.cell, field.cell, field.cell} * (0.5 * (res - 1));
    field.values.assign(size_t(res) * res * res, 0.0f);

    double reach = cfg.category.tau + 7.0 * field.cell;
    std::vector<char> mask = boundary_mask(field, bounds, reach);

    std::vector<size_t> active;
    for (size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) active.push_back(i);

    const size_t batch = 4096;
    for (size_t start = 0; start < active.size(); start += batch) {
        size_t count = std::min(batch, active.size() - start);
        std::vector<Vec3> pts(count);
        for (size_t i = 0; i < count; ++i) {
            size_t idx = active[start + i];
            size_t x = idx % res, y = (idx / res) % res, z = idx / (size_t(res) * res);
            pts[i] = field.position(int(x), int(y), int(z));
        }
        auto vals = decode_batch(joint_store, codes, pts);
        for (size_t i = 0; i < count; ++i) field.values[active[start + i]] = vals[i];
    }
    return field;
}

json transforms_to_json(const std::vector<SimilarityTransform>& xfs) {
    json out = json::array();
    for (const auto& xf : xfs) out.push_back({xf.s, xf.t.x, xf.t.y, xf.t.z});
    return out;
}

}  // namespace

AssembleResult assemble(const PipelineConfig& cfg, const std::vector<PartSelection>& selection) {
    if (!checkpoint_exists(cfg.align_ckpt))
        throw std::runtime_error("alignment checkpoint not found: " + cfg.align_ckpt);
    if (!checkpoint_exists(cfg.joint_ckpt))
        throw std::runtime_error("joint checkpoint not found: " + cfg.joint_ckpt);
    if (selection.empty()) throw std::runtime_error("assemble: empty part selection");

    auto t_start = std::chrono::steady_clock::now();
    ParamStore<real> align_store, joint_store;
    load_checkpoint(cfg.align_ckpt, align_store);
    load_checkpoint(cfg.joint_ckpt, joint_store);

    const size_t slots = cfg.category.slots();
    struct SlotState {
        bool present = false;
        PrepPart part;
        CloudTransform norm_xf;
    };
    std::vector<SlotState> state(slots);
    std::map<std::string, PrepShape> prepped;
    for (const auto& sel : selection) {
        int slot = cfg.category.slot_of(sel.label);
        if (slot < 0)
            throw std::runtime_error("label '" + sel.label + "' not in category " +
                                     cfg.category.name);
        if (!prepped.count(sel.shape_dir))
            prepped.emplace(sel.shape_dir, prepare_shape_cached(cfg, sel.shape_dir));
        const PrepShape& prep = prepped.at(sel.shape_dir);
        if (!prep.parts[slot].present)
            throw std::runtime_error("shape " + sel.shape_dir + " has no part '" + sel.label + "'");
        state[slot].present = true;
        state[slot].part = prep.parts[slot];
    }

    // stage 1: alignment
    std::vector<PartCode> align_codes(slots);
    for (size_t k = 0; k < slots; ++k) {
        if (!state[k].present) {
            align_codes[k] = absent_code(kAlignCodeWidth);
            continue;
        }
        align_codes[k] = encode_align(align_store, state[k].part.normalized_cloud.points);
    }
    std::vector<SimilarityTransform> predicted = predict_transforms(align_store, align_codes);

    // aligned clouds for the joint encoders
    auto aligned_points = [&](size_t k, const SimilarityTransform& xf) {
        std::vector<Vec3> pts;
        pts.reserve(state[k].part.normalized_cloud.size());
        for (const auto& p : state[k].part.normalized_cloud.points) pts.push_back(xf.apply(p));
        return pts;
    };
    std::vector<PartCode> joint_codes(slots);
    for (size_t k = 0; k < slots; ++k) {
        if (!state[k].present) {
            joint_codes[k] = absent_code(kJointCodeWidth);
            continue;
        }
        auto cloud = aligned_points(k, predicted[k]);
        std::vector<Vec3> near;
        for (int i : state[k].part.near_joint) near.push_back(cloud[i]);
        joint_codes[k] =
            encode_joint(joint_store, cfg.category.part_labels[k], cloud, near);
    }

    // refine parts live in the normalized frame; boundaries come along
    std::vector<RefinePart> refine_parts(slots);
    std::vector<std::vector<Polyline>> norm_bounds(slots);
    for (size_t k = 0; k < slots; ++k) {
        if (!state[k].present) continue;
        const PrepPart& part = state[k].part;
        // boundary polylines mapped into the part's normalized frame
        SimilarityTransform shape_to_norm = part.gt.inverse();
        std::vector<Polyline> nb = part.boundary;
        for (auto& pl : nb)
            for (auto& p : pl.points) p = shape_to_norm.apply(p);
        norm_bounds[k] = nb;

        RefinePart rp;
        rp.present = true;
        rp.cloud = part.normalized_cloud.points;
        rp.normals = part.normalized_cloud.normals;
        for (const auto& p : rp.cloud) rp.boundary_dist.push_back(polyline_distance(p, nb));
        refine_parts[k] = std::move(rp);
    }

    auto transformed_bounds = [&](const std::vector<SimilarityTransform>& xfs) {
        std::vector<std::vector<Polyline>> out(slots);
        for (size_t k = 0; k < slots; ++k) {
            if (!state[k].present) continue;
            out[k] = norm_bounds[k];
            for (auto& pl : out[k])
                for (auto& p : pl.points) p = xfs[k].apply(p);
        }
        return out;
    };
    auto assembled_box = [&](const std::vector<SimilarityTransform>& xfs) {
        Aabb box;
        for (size_t k = 0; k < slots; ++k) {
            if (!state[k].present) continue;
            for (const auto& p : state[k].part.normalized_cloud.points) box.expand(xfs[k].apply(p));
        }
        return box;
    };
    auto part_meshes = [&](const std::vector<SimilarityTransform>& xfs) {
        std::vector<TriMesh> parts;
        for (size_t k = 0; k < slots; ++k) {
            if (!state[k].present) continue;
            const PrepPart& part = state[k].part;
            // mesh lives in the shape frame; compose shape->normalized->assembled
            parts.push_back(
                apply_transform(part.eroded_mesh, compose(part.gt.inverse(), xfs[k])));
        }
        return parts;
    };

    AssembleResult result;

    // before-refine stage output
    ScalarField field0 = evaluate_field(cfg, joint_store, joint_codes,
                                        transformed_bounds(predicted), assembled_box(predicted));
    {
        std::vector<TriMesh> pieces = part_meshes(predicted);
        pieces.push_back(marching_cubes(field0, field0.iso));
        result.before_refine = weld_vertices(merge_meshes(pieces), 1e-6);
    }

    // test-time optimization
    std::vector<SimilarityTransform> final_xfs = predicted;
    ParamStore<real> refined_decoder = joint_store;
    if (cfg.refine_enabled && cfg.refine.iterations > 0) {
        RefineConfig rc = cfg.refine;
        rc.lambda = cfg.lambda;
        RefineResult rr = refine(refined_decoder, joint_codes, refine_parts, predicted, rc);
        final_xfs = rr.transforms;
        result.h_trace = rr.h_trace;
    }
    result.transforms = final_xfs;

    ScalarField field1 =
        cfg.refine_enabled && cfg.refine.iterations > 0
            ? evaluate_field(cfg, refined_decoder, joint_codes, transformed_bounds(final_xfs),
                             assembled_box(final_xfs))
            : field0;
    {
        std::vector<TriMesh> pieces = part_meshes(final_xfs);
        pieces.push_back(marching_cubes(field1, field1.iso));
        result.after_refine = weld_vertices(merge_meshes(pieces), 1e-6);
    }

    result.mesh = stitch(part_meshes(final_xfs), field1, &result.flags);

    auto t_end = std::chrono::steady_clock::now();
    json manifest;
    manifest["category"] = cfg.category.name;
    manifest["seed"] = cfg.seed;
    manifest["align_ckpt_hash"] = fnv1a_file(cfg.align_ckpt);
    manifest["joint_ckpt_hash"] = fnv1a_file(cfg.joint_ckpt);
    json sel = json::array();
    for (const auto& s : selection) sel.push_back({s.shape_dir, s.label});
    manifest["selection"] = sel;
    manifest["transforms"] = transforms_to_json(final_xfs);
    manifest["h_trace"] = result.h_trace;
    manifest["loops_matched"] = result.flags.loops_matched;
    manifest["loops_total"] = result.flags.loops_total;
    manifest["seconds"] = std::chrono::duration<double>(t_end - t_start).count();
    result.manifest_json = manifest.dump(1);
    return result;
}

// ---- evaluation --------------------------------------------------------------------------

std::string EvaluateReport::to_text() const {
    std::ostringstream os;
    os << "stage";
    for (const auto& id : shape_ids) os << "\t" << id;
    os << "\tmean\n";
    for (const auto& row : rows) {
        os << row.stage;
        for (double v : row.per_shape) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.4f", v);
            os << "\t" << buf;
        }
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.4f", row.mean);
        os << "\t" << buf << "\n";
    }
    return os.str();
}

std::string EvaluateReport::to_json() const {
    json j;
    j["shapes"] = shape_ids;
    for (const auto& row : rows) {
        json r;
        r["stage"] = row.stage;
        r["chamfer_x1e3"] = row.per_shape;
        r["mean"] = row.mean;
        j["rows"].push_back(r);
    }
    return j.dump(1);
}

EvaluateReport evaluate_suite(const PipelineConfig& cfg,
                              const std::vector<std::string>& shape_dirs) {
    if (shape_dirs.empty()) throw std::runtime_error("evaluate_suite: empty test set");
    EvaluateReport report;
    report.rows = {{"Ours (before test-time opt.)", {}, 0},
                   {"Ours (after test-time opt.)", {}, 0},
                   {"Ours (after Poisson blending)", {}, 0}};

    for (const auto& dir : shape_dirs) {
        PrepShape prep = prepare_shape_cached(cfg, dir);
        report.shape_ids.push_back(prep.shape_id);

        std::vector<PartSelection> selection;
        for (const auto& part : prep.parts)
            if (part.present) selection.push_back({dir, part.label});
        AssembleResult r = assemble(cfg, selection);

        double c0 = chamfer(cfg, r.before_refine, prep.shape_mesh);
        double c1 = chamfer(cfg, r.after_refine, prep.shape_mesh);
        double c2 = chamfer(cfg, r.mesh, prep.shape_mesh);
        report.rows[0].per_shape.push_back(c0);
        report.rows[1].per_shape.push_back(c1);
        report.rows[2].per_shape.push_back(c2);
        if (cfg.verbose)
            std::printf("evaluate %s: %.4f / %.4f / %.4f\n", prep.shape_id.c_str(), c0, c1, c2);
    }
    for (auto& row : report.rows) {
        row.mean = std::accumulate(row.per_shape.begin(), row.per_shape.end(), 0.0) /
                   double(row.per_shape.size());
    }
    return report;
}

}  // namespace coalesce
