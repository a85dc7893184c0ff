#include <CLI11.hpp>

#include <tridyson/cli.hpp>

using namespace tridyson;

int main(int argc, char** argv) {
    CLI::App app{"tridyson: tridiagonal models, matrix-valued flows and their checks"};
    app.require_subcommand(1);
    RunConfig c;
    std::string config_path;

    auto common = [&](CLI::App* s) {
        s->add_option("--n", c.n, "matrix size");
        s->add_option("--beta", c.beta, "inverse temperature")->capture_default_str();
        s->add_option("--seed", c.seed, "base seed")->capture_default_str();
        s->add_option("--jobs", c.jobs, "worker threads")->capture_default_str();
        s->add_option("--out", c.out, "output directory")->capture_default_str();
        s->add_option("--config", config_path, "JSON file whose keys override flags");
    };

    auto* sample = app.add_subcommand("sample", "draw tridiagonal matrices");
    common(sample);
    sample->add_option("--count", c.count, "number of matrices")->capture_default_str();
    sample->add_option("--rule", c.rule, "chi parameter rule (calibrated|printed)")->capture_default_str();

    auto* evolve = app.add_subcommand("evolve", "integrate a flow and write trajectories");
    common(evolve);
    evolve->add_option("--model", c.model, "dbm|frozen|smooth")->capture_default_str();
    evolve->add_option("--route", c.route, "a|b|both")->capture_default_str();
    evolve->add_option("--potential", c.potential, "quadratic|zero")->capture_default_str();
    evolve->add_option("--dt", c.dt, "time step (0: 1e-3/n)")->capture_default_str();
    evolve->add_option("--t-end", c.t_end, "final time")->capture_default_str();
    evolve->add_option("--trials", c.trials, "independent replicas");
    evolve->add_option("--corner-m", c.corner_m, "record the top-left m x m corner (0: all)");
    evolve->add_option("--every", c.every, "record every k-th step (0: about 1000 rows)");
    evolve->add_option("--init", c.init, "initial matrix JSON (as written by sample or evolve)");
    evolve->add_option("--replay-noise", c.replay_noise, "replay a noise CSV written with --log-noise");
    evolve->add_flag("--log-noise", c.log_noise, "write the accepted increments of replica 0 route 1");
    evolve->add_option("--weight-drift", c.weight_drift, "weight drift scale for the smooth model")
        ->capture_default_str();

    auto* verify = app.add_subcommand("verify", "run a verification suite");
    common(verify);
    std::string names;
    for (const auto& s : suite_names()) names += (names.empty() ? "" : "|") + s;
    verify->add_option("suite", c.suite, names)->required();
    verify->add_option("--trials", c.trials, "trials (0: suite default)");
    verify->add_option("--corner-m", c.corner_m, "corner size for flow checks");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return exit_parameter;
    }

    return run_guarded([&] {
        if (!config_path.empty()) apply_config(c, read_json(config_path));
        if (*sample) {
            c.command = "sample";
            return cmd_sample(c);
        }
        if (*evolve) {
            c.command = "evolve";
            return cmd_evolve(c);
        }
        c.command = "verify";
        return cmd_verify(c);
    });
}
