#include <cstdio>
#include <fstream>

#include <CLI11.hpp>

#include "coalesce/pipeline.hpp"

using namespace coalesce;

namespace {

PipelineConfig config_from(const std::string& path) {
    PipelineConfig cfg = load_config(path);
    return cfg;
}

std::vector<std::string> shapes_or_all(const PipelineConfig& cfg,
                                       std::vector<std::string> shapes) {
    if (!shapes.empty()) return shapes;
    return dataset_shape_dirs(cfg.data_dir);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"COALESCE part assembly pipeline"};
    app.require_subcommand(1);

    // gen-data
    std::string gd_category = "chairlike", gd_out;
    size_t gd_count = 8;
    uint64_t gd_seed = 1;
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic labeled-part dataset");
    gen->add_option("--category", gd_category, "chairlike|muglike");
    gen->add_option("--count", gd_count, "number of shapes");
    gen->add_option("--seed", gd_seed, "generator seed");
    gen->add_option("--out", gd_out, "output dataset directory")->required();

    // preprocess
    std::string pp_config;
    std::vector<std::string> pp_shapes;
    auto* pre = app.add_subcommand("preprocess", "compute and cache per-shape training data");
    pre->add_option("--config", pp_config)->required();
    pre->add_option("--shape", pp_shapes, "specific shape directories (default: all)");

    // train-align
    std::string ta_config, ta_out;
    std::vector<std::string> ta_shapes;
    auto* talign = app.add_subcommand("train-align", "train the part alignment network");
    talign->add_option("--config", ta_config)->required();
    talign->add_option("--out", ta_out, "checkpoint path")->required();
    talign->add_option("--shape", ta_shapes);
    int ta_epochs = -1;
    double ta_lr = -1;
    int ta_batch = -1;
    talign->add_option("--epochs", ta_epochs);
    talign->add_option("--lr", ta_lr);
    talign->add_option("--batch", ta_batch);

    // pretrain-enc
    std::string pe_config, pe_out;
    std::vector<std::string> pe_shapes;
    int pe_epochs = -1;
    auto* pretrain = app.add_subcommand("pretrain-enc", "pretrain the joint part encoders");
    pretrain->add_option("--config", pe_config)->required();
    pretrain->add_option("--out", pe_out)->required();
    pretrain->add_option("--shape", pe_shapes);
    pretrain->add_option("--epochs", pe_epochs);

    // train-joint
    std::string tj_config, tj_pre, tj_out;
    std::vector<std::string> tj_shapes;
    int tj_s2 = -1, tj_s3 = -1;
    double tj_alpha = -1, tj_lambda = -1;
    auto* tjoint = app.add_subcommand("train-joint", "train the joint synthesis network");
    tjoint->add_option("--config", tj_config)->required();
    tjoint->add_option("--pretrain", tj_pre, "pretrained encoder checkpoint")->required();
    tjoint->add_option("--out", tj_out)->required();
    tjoint->add_option("--shape", tj_shapes);
    tjoint->add_option("--stage2-epochs", tj_s2);
    tjoint->add_option("--stage3-epochs", tj_s3);
    tjoint->add_option("--alpha", tj_alpha);
    tjoint->add_option("--lambda", tj_lambda);

    // assemble
    std::string as_config, as_out;
    std::vector<std::string> as_parts;
    bool as_no_refine = false;
    int as_refine_iters = -1;
    bool as_debug = false;
    auto* asm_cmd = app.add_subcommand("assemble", "assemble parts into a stitched mesh");
    asm_cmd->add_option("--config", as_config)->required();
    asm_cmd->add_option("--part", as_parts, "shape_dir:label, repeatable")->required();
    asm_cmd->add_option("--out", as_out, "output OBJ path")->required();
    asm_cmd->add_flag("--no-refine", as_no_refine, "skip test-time optimization");
    asm_cmd->add_option("--refine-iters", as_refine_iters, "override refine iterations");
    asm_cmd->add_flag("--debug-dumps", as_debug, "write per-stage meshes next to the output");

    // evaluate
    std::string ev_config, ev_out, ev_perturb = "none";
    std::vector<std::string> ev_shapes;
    uint64_t ev_seed = 7;
    auto* eval = app.add_subcommand("evaluate", "chamfer report across pipeline stages");
    eval->add_option("--config", ev_config)->required();
    eval->add_option("--out", ev_out, "report path prefix (.json/.txt)");
    eval->add_option("--shape", ev_shapes);
    eval->add_option("--perturb", ev_perturb, "none|sine|similarity");
    eval->add_option("--perturb-seed", ev_seed);

    // perturb
    std::string pt_config, pt_mode = "sine", pt_out;
    uint64_t pt_seed = 7;
    auto* pert = app.add_subcommand("perturb", "write a perturbed copy of the dataset");
    pert->add_option("--config", pt_config)->required();
    pert->add_option("--mode", pt_mode, "sine|similarity");
    pert->add_option("--seed", pt_seed);
    pert->add_option("--out", pt_out, "output dataset directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) {
            auto dirs = generate_synthetic(gd_category, gd_count, gd_seed, gd_out);
            std::printf("wrote %zu shapes under %s\n", dirs.size(), gd_out.c_str());
        } else if (*pre) {
            PipelineConfig cfg = config_from(pp_config);
            for (const auto& dir : shapes_or_all(cfg, pp_shapes)) {
                prepare_shape_cached(cfg, dir);
                std::printf("prepared %s\n", dir.c_str());
            }
        } else if (*talign) {
            PipelineConfig cfg = config_from(ta_config);
            if (ta_epochs >= 0) cfg.align_epochs = ta_epochs;
            if (ta_lr >= 0) cfg.align_lr = ta_lr;
            if (ta_batch >= 0) cfg.align_batch = ta_batch;
            run_train_align(cfg, shapes_or_all(cfg, ta_shapes), ta_out);
            std::printf("wrote %s\n", ta_out.c_str());
        } else if (*pretrain) {
            PipelineConfig cfg = config_from(pe_config);
            if (pe_epochs >= 0) cfg.pretrain_epochs = pe_epochs;
            run_pretrain_encoders(cfg, shapes_or_all(cfg, pe_shapes), pe_out);
            std::printf("wrote %s\n", pe_out.c_str());
        } else if (*tjoint) {
            PipelineConfig cfg = config_from(tj_config);
            if (tj_s2 >= 0) cfg.stage2_epochs = tj_s2;
            if (tj_s3 >= 0) cfg.stage3_epochs = tj_s3;
            if (tj_alpha >= 0) cfg.alpha = tj_alpha;
            if (tj_lambda > 0) cfg.lambda = tj_lambda;
            run_train_joint(cfg, shapes_or_all(cfg, tj_shapes), tj_pre, tj_out);
            std::printf("wrote %s\n", tj_out.c_str());
        } else if (*asm_cmd) {
            PipelineConfig cfg = config_from(as_config);
            if (as_no_refine) cfg.refine_enabled = false;
            if (as_refine_iters >= 0) cfg.refine.iterations = as_refine_iters;
            std::vector<PartSelection> selection;
            for (const auto& spec : as_parts) {
                size_t colon = spec.rfind(':');
                if (colon == std::string::npos)
                    throw std::runtime_error("--part expects shape_dir:label, got " + spec);
                selection.push_back({spec.substr(0, colon), spec.substr(colon + 1)});
            }
            AssembleResult result = assemble(cfg, selection);
            save_mesh(result.mesh, as_out);
            std::ofstream(as_out + ".manifest.json") << result.manifest_json << "\n";
            if (as_debug) {
                save_mesh(result.before_refine, as_out + ".before_refine.obj");
                save_mesh(result.after_refine, as_out + ".after_refine.obj");
            }
            std::printf("wrote %s (loops %zu/%zu matched)\n", as_out.c_str(),
                        result.flags.loops_matched, result.flags.loops_total);
        } else if (*eval) {
            PipelineConfig cfg = config_from(ev_config);
            auto shapes = shapes_or_all(cfg, ev_shapes);
            if (ev_perturb != "none") {
                std::string out_dir = cfg.data_dir + "_" + ev_perturb;
                shapes = perturb_dataset(cfg.data_dir, out_dir, ev_perturb, PerturbConfig{},
                                         ev_seed);
            }
            EvaluateReport report = evaluate_suite(cfg, shapes);
            std::fputs(report.to_text().c_str(), stdout);
            if (!ev_out.empty()) {
                std::ofstream(ev_out + ".json") << report.to_json() << "\n";
                std::ofstream(ev_out + ".txt") << report.to_text();
            }
        } else if (*pert) {
            PipelineConfig cfg = config_from(pt_config);
            auto dirs = perturb_dataset(cfg.data_dir, pt_out, pt_mode, PerturbConfig{}, pt_seed);
            std::printf("wrote %zu perturbed shapes under %s\n", dirs.size(), pt_out.c_str());
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
