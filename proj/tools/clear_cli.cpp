// Subcommand front-end over the pipeline stages and report emitters.

#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "clear/pipeline.hpp"

namespace {

int exit_code_for(const clear::Error& e) {
    switch (e.kind()) {
        case clear::ErrorKind::config: return 1;
        case clear::ErrorKind::service: return 3;
        default: return 2;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"CLEAR pipeline: fine-grained pruning, hidden-state conflict "
                 "probing, and conflict-aware fine-tuning for RAG"};
    app.require_subcommand(1);

    std::string config_path;
    app.add_option("-c,--config", config_path, "run configuration file (JSON)")
        ->required();

    struct Cmd {
        CLI::App* sub;
        std::string name;
    };
    std::vector<Cmd> stage_cmds;
    for (const char* name : {"decompose", "prune", "probe-train", "detect", "annotate",
                             "train", "evaluate"}) {
        Cmd c;
        c.name = name;
        c.sub = app.add_subcommand(name, std::string("run the ") + name + " stage");
        stage_cmds.push_back(c);
    }

    CLI::App* run_cmd = app.add_subcommand("run", "run a contiguous stage range");
    std::string from_stage = "decompose";
    std::string to_stage = "evaluate";
    run_cmd->add_option("--from", from_stage, "first stage (default decompose)");
    run_cmd->add_option("--to", to_stage, "last stage (default evaluate)");

    CLI::App* probe_eval_cmd =
        app.add_subcommand("probe-eval", "evaluate the trained probe on edit pairs");
    CLI::App* project_cmd = app.add_subcommand(
        "project", "export a 2D projection of aligned vs conflicting hidden states");
    CLI::App* sweep_cmd = app.add_subcommand(
        "sweep-lambda", "train across the lambda grid and emit (lambda, accuracy, "
                        "attention_mass) rows");
    CLI::App* report_cmd = app.add_subcommand(
        "report", "clean vs irrelevant vs conflict degradation comparison");

    CLI11_PARSE(app, argc, argv);

    try {
        clear::RunConfig config = clear::RunConfig::load(config_path);

        for (const auto& cmd : stage_cmds) {
            if (cmd.sub->parsed()) {
                clear::Stage stage = clear::stage_from_string(cmd.name);
                config.validate(stage, stage);
                clear::run_stage(config, stage);
                return 0;
            }
        }
        if (run_cmd->parsed()) {
            clear::Stage from = clear::stage_from_string(from_stage);
            clear::Stage to = clear::stage_from_string(to_stage);
            clear::run_pipeline(config, from, to);
            return 0;
        }
        if (probe_eval_cmd->parsed()) {
            config.validate(clear::Stage::probe_train, clear::Stage::probe_train);
            clear::run_probe_eval(config);
            return 0;
        }
        if (project_cmd->parsed()) {
            config.validate(clear::Stage::probe_train, clear::Stage::probe_train);
            clear::run_project(config);
            return 0;
        }
        if (sweep_cmd->parsed()) {
            config.validate(clear::Stage::evaluate, clear::Stage::evaluate);
            clear::run_sweep_lambda(config);
            return 0;
        }
        if (report_cmd->parsed()) {
            config.validate(clear::Stage::evaluate, clear::Stage::evaluate);
            clear::run_report(config);
            return 0;
        }
        std::cerr << "no subcommand selected\n";
        return 1;
    } catch (const clear::Error& e) {
        std::cerr << "error (" << clear::error_kind_name(e.kind()) << "): " << e.what()
                  << "\n";
        return exit_code_for(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
