// svrecon command line: reconstruct / evaluate / dump-system / synth-fixture
#include <CLI11.hpp>
#include <fmt/format.h>

#include <filesystem>
#include <iostream>

#include "svrecon/fixtures.hpp"
#include "svrecon/svrecon.hpp"

namespace fs = std::filesystem;
using namespace svrecon;

namespace {

Config config_or_default(const std::string& path)
{
    return path.empty() ? Config{} : Config::load(path);
}

int exit_code(ErrorKind k)
{
    switch (k) {
    case ErrorKind::InvalidConfig:
    case ErrorKind::ParseError:
    case ErrorKind::FileNotFound:
        return 2;
    default:
        return 1;
    }
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Sparse-voxel implicit surface reconstruction"};
    app.require_subcommand(1);

    std::string config_path, input, output, report;
    int workers = -1;
    auto* rec = app.add_subcommand("reconstruct", "point cloud -> triangle mesh");
    rec->add_option("--config", config_path, "INI configuration")->required()->check(CLI::ExistingFile);
    rec->add_option("--input", input, "overrides io.input");
    rec->add_option("--output", output, "overrides io.output");
    rec->add_option("--report", report, "overrides io.report");
    rec->add_option("--workers", workers, "overrides run.workers");

    std::string pred, gt, csv, eval_config;
    auto* ev = app.add_subcommand("evaluate", "score a mesh against ground truth, append a CSV row");
    ev->add_option("--pred", pred)->required()->check(CLI::ExistingFile);
    ev->add_option("--gt", gt)->required()->check(CLI::ExistingFile);
    ev->add_option("--out", csv, "CSV file (created with header if new)")->required();
    ev->add_option("--config", eval_config, "reads the [metrics] section")->check(CLI::ExistingFile);

    std::string dump_config, dump_matrix, dump_rhs, dump_input;
    auto* dump = app.add_subcommand("dump-system", "assemble only; write matrix (k l value) and rhs");
    dump->add_option("--config", dump_config)->required()->check(CLI::ExistingFile);
    dump->add_option("--input", dump_input, "overrides io.input");
    dump->add_option("--matrix", dump_matrix, "overrides dump.matrix");
    dump->add_option("--rhs", dump_rhs, "overrides dump.rhs");

    std::string fx_points, fx_mesh;
    std::size_t fx_n = 3000;
    double fx_radius = 0.35;
    auto* fx = app.add_subcommand("synth-fixture", "sphere samples with normals plus a reference mesh");
    fx->add_option("--points", fx_points, "xyz output")->required();
    fx->add_option("--mesh", fx_mesh, "ply/obj reference output");
    fx->add_option("-n,--count", fx_n)->check(CLI::PositiveNumber);
    fx->add_option("--radius", fx_radius)->check(CLI::PositiveNumber);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*rec) {
            auto cfg = Config::load(config_path);
            if (!input.empty())
                cfg.io.input = input;
            if (!output.empty())
                cfg.io.output = output;
            if (!report.empty())
                cfg.io.report = report;
            if (workers >= 0)
                cfg.run.workers = unsigned(workers);
            const auto r = reconstruct(cfg);
            fmt::print("{}: {} vertices, {} triangles ({} dof, {} CG iterations, {})\n", cfg.io.output.string(),
                       r.vertices, r.triangles, r.dof, r.cg_iterations, r.mode);
        } else if (*ev) {
            const auto m = evaluate(pred, gt, csv, config_or_default(eval_config));
            fmt::print("{}\n{}\n", MetricsReport::csv_header(), m.csv_row());
        } else if (*dump) {
            auto cfg = Config::load(dump_config);
            if (!dump_input.empty())
                cfg.io.input = dump_input;
            if (!dump_matrix.empty())
                cfg.dump.matrix = dump_matrix;
            if (!dump_rhs.empty())
                cfg.dump.rhs = dump_rhs;
            const auto sys = dump_system(cfg);
            fmt::print("{} x {} matrix, {} nonzeros -> {}, {}\n", sys.A.rows(), sys.A.rows(), sys.A.nonzeros(),
                       cfg.dump.matrix.string(), cfg.dump.rhs.string());
        } else if (*fx) {
            const Vec3 c(0.5, 0.5, 0.5);
            write_xyz(fixtures::sphere_samples(fx_n, c, fx_radius), fx_points);
            if (!fx_mesh.empty())
                write_mesh(fixtures::icosphere(c, fx_radius, 6), fx_mesh);
        }
    } catch (const Error& e) {
        std::cerr << "svrecon: " << e.what() << '\n';
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "svrecon: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
