#ifndef SVRECON_PIPELINE_HPP
#define SVRECON_PIPELINE_HPP

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "svrecon/basis.hpp"
#include "svrecon/error.hpp"
#include "svrecon/extract.hpp"
#include "svrecon/geometry.hpp"
#include "svrecon/io.hpp"
#include "svrecon/metrics.hpp"
#include "svrecon/normals.hpp"
#include "svrecon/prior.hpp"
#include "svrecon/solver.hpp"
#include "svrecon/voxel.hpp"

namespace svrecon {

enum class NormalSource { automatic, file, estimate, prior };

/// Every run parameter. All keys have defaults; see configs/default.ini.
struct Config {
    struct Io {
        std::filesystem::path input;
        std::filesystem::path output = "reconstruction.ply";
        std::filesystem::path report; ///< empty: <output>.report.json
        bool normalize = true;
        double padding = 0.1;
    } io;
    struct Scaffold {
        double base_size = 0.02;
        int num_scales = 4;
        int adaptive_depth = 0; ///< 0: same as num_scales
    } scaffold;
    struct Normals {
        NormalSource source = NormalSource::automatic;
        int k = 10;
    } normals;
    struct Basis {
        int degree = 4;
        std::vector<int> sine_frequencies;
        Continuity continuity = Continuity::C1_polynomial;
        int quad_order = 0; ///< 0: max(4, degree + 1)
    } basis;
    struct Solver {
        double lambda_H = 3.0;
        double lambda_P = 64.0;
        double screening = 0.0; ///< global target value at input points
        double tolerance = 1e-8;
        int max_iterations = 0; ///< 0: 10 x dof count
    } solver;
    struct Prior {
        bool enabled = false;
        std::filesystem::path weights; ///< empty: seeded random initialization
        std::uint64_t seed = 42;
        int channels = 8;
        long long n_min = 4;
        long long n_max = 32;
    } prior;
    struct Extract {
        double iso = 0.0;
        double floater_tau = 0.0; ///< 0: 3 x base_size
    } extract;
    struct Metrics {
        std::size_t surface_samples = 30000;
        double f_score_tau = 0.01;
        std::size_t iou_samples = 100000;
        std::uint64_t seed = 0;
    } metrics;
    struct Dump {
        std::filesystem::path matrix = "system_matrix.txt";
        std::filesystem::path rhs = "system_rhs.txt";
    } dump;
    struct Run {
        unsigned workers = 0; ///< 0: all hardware threads
        bool timing = true;   ///< write wall times to <report>.timing.json
    } run;

    int adaptive_depth() const { return scaffold.adaptive_depth > 0 ? scaffold.adaptive_depth : scaffold.num_scales; }
    double floater_tau() const { return extract.floater_tau > 0.0 ? extract.floater_tau : 3.0 * scaffold.base_size; }

    std::filesystem::path report_path() const
    {
        if (!io.report.empty())
            return io.report;
        auto p = io.output;
        p += ".report.json";
        return p;
    }

    SolverWeights weights() const { return {solver.lambda_H, solver.lambda_P}; }

    BasisSpec basis_spec() const { return make_basis_spec(basis.degree, basis.sine_frequencies, basis.continuity); }

    void validate() const
    {
        auto bad = [](const std::string& m) { throw Error(ErrorKind::InvalidConfig, m); };
        if (!(scaffold.base_size > 0.0))
            bad("scaffold.base_size must be positive");
        if (scaffold.num_scales < 1 || scaffold.num_scales > 16)
            bad("scaffold.num_scales must lie in [1, 16]");
        if (adaptive_depth() > scaffold.num_scales)
            bad("scaffold.adaptive_depth exceeds num_scales");
        if (normals.k < 3)
            bad("normals.k must be at least 3");
        if (basis.quad_order < 0)
            bad("basis.quad_order must be non-negative");
        (void)basis_spec(); // degree / frequency errors keep their own kinds
        weights().validate();
        if (!(solver.tolerance > 0.0))
            bad("solver.tolerance must be positive");
        if (solver.max_iterations < 0)
            bad("solver.max_iterations must be non-negative");
        if (prior.channels < 1)
            bad("prior.channels must be positive");
        if (!(prior.n_min < prior.n_max))
            bad("prior.n_min must be below prior.n_max");
        if (normals.source == NormalSource::prior && !prior.enabled)
            bad("normals.source = prior needs prior.enabled = true");
        if (extract.floater_tau < 0.0)
            bad("extract.floater_tau must be non-negative");
        if (!(metrics.f_score_tau > 0.0) || metrics.surface_samples == 0 || metrics.iou_samples < 1000)
            bad("metrics settings out of range");
    }

    /// Parses INI text. Relative paths are resolved against base_dir. Unknown sections or keys are errors.
    static Config parse(const std::string& text, const std::filesystem::path& base_dir = {})
    {
        namespace pt = boost::property_tree;
        pt::ptree tree;
        std::istringstream in(text);
        try {
            pt::read_ini(in, tree);
        } catch (const pt::ini_parser_error& e) {
            throw ParseError(e.line(), e.message());
        }
        Config c;
        const auto fields = c.bind(base_dir);
        for (const auto& [section, body] : tree) {
            if (body.empty() && !body.data().empty())
                throw Error(ErrorKind::InvalidConfig, "key outside a section: " + section);
            for (const auto& [key, value] : body) {
                const std::string name = section + "." + key;
                auto it = std::find_if(fields.begin(), fields.end(), [&](const auto& f) { return f.name == name; });
                if (it == fields.end())
                    throw Error(ErrorKind::InvalidConfig, "unknown config key " + name);
                try {
                    it->set(value.data());
                } catch (const Error&) {
                    throw;
                } catch (const std::exception&) {
                    throw Error(ErrorKind::InvalidConfig, "bad value for " + name + ": '" + value.data() + "'");
                }
            }
        }
        c.validate();
        return c;
    }

    static Config load(const std::filesystem::path& path)
    {
        std::ifstream f(path);
        if (!f)
            throw Error(ErrorKind::FileNotFound, "cannot open config " + path.string());
        std::stringstream ss;
        ss << f.rdbuf();
        return parse(ss.str(), path.parent_path());
    }

    /// Canonical INI rendering of every key.
    std::string to_ini() const
    {
        auto fields = const_cast<Config*>(this)->bind({});
        std::string out, section;
        for (const auto& f : fields) {
            const auto dot = f.name.find('.');
            const auto s = f.name.substr(0, dot);
            if (s != section) {
                out += (section.empty() ? "" : "\n") + fmt::format("[{}]\n", s);
                section = s;
            }
            out += fmt::format("{} = {}\n", f.name.substr(dot + 1), f.get());
        }
        return out;
    }

private:
    struct Field {
        std::string name;
        std::function<void(const std::string&)> set;
        std::function<std::string()> get;
    };

    std::vector<Field> bind(const std::filesystem::path& base)
    {
        std::vector<Field> f;
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t"), b = s.find_last_not_of(" \t");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        auto num = [&](const std::string& n, auto& ref) {
            using T = std::decay_t<decltype(ref)>;
            f.push_back({n,
                         [&ref, trim](const std::string& v) {
                             const auto t = trim(v);
                             std::size_t used = 0;
                             if constexpr (std::is_floating_point_v<T>)
                                 ref = T(std::stod(t, &used));
                             else if constexpr (std::is_unsigned_v<T>) {
                                 if (!t.empty() && t[0] == '-')
                                     throw std::invalid_argument("negative");
                                 ref = T(std::stoull(t, &used));
                             } else
                                 ref = T(std::stoll(t, &used));
                             if (used != t.size())
                                 throw std::invalid_argument("trailing characters");
                         },
                         [&ref] {
                             if constexpr (std::is_floating_point_v<T>)
                                 return fmt::format("{}", ref);
                             else
                                 return std::to_string(ref);
                         }});
        };
        auto flag = [&](const std::string& n, bool& ref) {
            f.push_back({n,
                         [&ref, trim](const std::string& v) {
                             const auto t = trim(v);
                             if (t == "true" || t == "1" || t == "yes")
                                 ref = true;
                             else if (t == "false" || t == "0" || t == "no")
                                 ref = false;
                             else
                                 throw std::invalid_argument("not a boolean");
                         },
                         [&ref] { return std::string(ref ? "true" : "false"); }});
        };
        auto path = [&](const std::string& n, std::filesystem::path& ref) {
            f.push_back({n,
                         [&ref, trim, base](const std::string& v) {
                             const std::filesystem::path p = trim(v);
                             ref = (p.empty() || p.is_absolute() || base.empty()) ? p : base / p;
                         },
                         [&ref] { return ref.string(); }});
        };
        path("io.input", io.input);
        path("io.output", io.output);
        path("io.report", io.report);
        flag("io.normalize", io.normalize);
        num("io.padding", io.padding);
        num("scaffold.base_size", scaffold.base_size);
        num("scaffold.num_scales", scaffold.num_scales);
        num("scaffold.adaptive_depth", scaffold.adaptive_depth);
        f.push_back({"normals.source",
                     [this, trim](const std::string& v) {
                         const auto t = trim(v);
                         if (t == "auto")
                             normals.source = NormalSource::automatic;
                         else if (t == "file")
                             normals.source = NormalSource::file;
                         else if (t == "estimate")
                             normals.source = NormalSource::estimate;
                         else if (t == "prior")
                             normals.source = NormalSource::prior;
                         else
                             throw Error(ErrorKind::InvalidConfig, "normals.source must be auto|file|estimate|prior");
                     },
                     [this] {
                         switch (normals.source) {
                         case NormalSource::file: return std::string("file");
                         case NormalSource::estimate: return std::string("estimate");
                         case NormalSource::prior: return std::string("prior");
                         default: return std::string("auto");
                         }
                     }});
        num("normals.k", normals.k);
        num("basis.degree", basis.degree);
        f.push_back({"basis.sine_frequencies",
                     [this, trim](const std::string& v) {
                         basis.sine_frequencies.clear();
                         std::stringstream ss(v);
                         std::string tok;
                         while (std::getline(ss, tok, ',')) {
                             tok = trim(tok);
                             if (tok.empty())
                                 continue;
                             std::size_t used = 0;
                             basis.sine_frequencies.push_back(std::stoi(tok, &used));
                             if (used != tok.size())
                                 throw std::invalid_argument("frequency");
                         }
                     },
                     [this] { return fmt::format("{}", fmt::join(basis.sine_frequencies, ",")); }});
        f.push_back({"basis.continuity",
                     [this, trim](const std::string& v) {
                         const auto t = trim(v);
                         if (t == "C1")
                             basis.continuity = Continuity::C1_polynomial;
                         else if (t == "C0")
                             basis.continuity = Continuity::C0_with_sines;
                         else
                             throw Error(ErrorKind::InvalidConfig, "basis.continuity must be C1 or C0");
                     },
                     [this] { return std::string(basis.continuity == Continuity::C1_polynomial ? "C1" : "C0"); }});
        num("basis.quad_order", basis.quad_order);
        num("solver.lambda_H", solver.lambda_H);
        num("solver.lambda_P", solver.lambda_P);
        num("solver.screening", solver.screening);
        num("solver.tolerance", solver.tolerance);
        num("solver.max_iterations", solver.max_iterations);
        flag("prior.enabled", prior.enabled);
        path("prior.weights", prior.weights);
        num("prior.seed", prior.seed);
        num("prior.channels", prior.channels);
        num("prior.n_min", prior.n_min);
        num("prior.n_max", prior.n_max);
        num("extract.iso", extract.iso);
        num("extract.floater_tau", extract.floater_tau);
        num("metrics.surface_samples", metrics.surface_samples);
        num("metrics.f_score_tau", metrics.f_score_tau);
        num("metrics.iou_samples", metrics.iou_samples);
        num("metrics.seed", metrics.seed);
        path("dump.matrix", dump.matrix);
        path("dump.rhs", dump.rhs);
        num("run.workers", run.workers);
        flag("run.timing", run.timing);
        return f;
    }
};

/// Deterministic facts about one run (no wall times; those go to the timing sidecar).
struct RunReport {
    std::string mode;           ///< "hessian-regularized" or "screened-Poisson"
    std::string normal_source;
    std::size_t num_points = 0;
    std::vector<std::size_t> voxels_per_scale;
    std::size_t domain_cells = 0;
    std::size_t dof = 0;
    std::size_t nonzeros = 0;
    int cg_iterations = 0;
    double residual = 0.0;
    double tolerance = 0.0;
    bool orientation_flipped = false;
    std::size_t vertices = 0;
    std::size_t triangles = 0;
    std::size_t floater_vertices_removed = 0;
    std::size_t peak_memory_estimate_bytes = 0;
    Transform transform;

    nlohmann::ordered_json to_json() const
    {
        nlohmann::ordered_json j;
        j["mode"] = mode;
        j["normal_source"] = normal_source;
        j["num_points"] = num_points;
        j["voxels_per_scale"] = voxels_per_scale;
        j["domain_cells"] = domain_cells;
        j["dof"] = dof;
        j["nonzeros"] = nonzeros;
        j["cg_iterations"] = cg_iterations;
        j["residual"] = residual;
        j["tolerance"] = tolerance;
        j["orientation_flipped"] = orientation_flipped;
        j["vertices"] = vertices;
        j["triangles"] = triangles;
        j["floater_vertices_removed"] = floater_vertices_removed;
        j["peak_memory_estimate_bytes"] = peak_memory_estimate_bytes;
        j["normalization"] = {{"scale", transform.scale},
                              {"translation", {transform.translation.x(), transform.translation.y(),
                                               transform.translation.z()}}};
        return j;
    }
};

struct StageTimer {
    std::vector<std::pair<std::string, double>> seconds;

    template <class F>
    auto run(const std::string& stage, F&& f) -> decltype(f())
    {
        const auto t0 = std::chrono::steady_clock::now();
        try {
            if constexpr (std::is_void_v<decltype(f())>) {
                f();
                seconds.emplace_back(stage, elapsed(t0));
            } else {
                auto r = f();
                seconds.emplace_back(stage, elapsed(t0));
                return r;
            }
        } catch (const StageError&) {
            throw;
        } catch (const Error& e) {
            throw StageError(stage, e);
        } catch (const std::exception& e) {
            throw StageError(stage, Error(ErrorKind::IoError, e.what()));
        }
    }

    double total() const
    {
        double t = 0.0;
        for (const auto& s : seconds)
            t += s.second;
        return t;
    }

private:
    static double elapsed(std::chrono::steady_clock::time_point t0)
    {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
};

struct Reconstruction {
    TriangleMesh mesh;          ///< in the input's coordinates
    ImplicitField field;        ///< in normalized coordinates
    SparseVoxelHierarchy hierarchy;
    RunReport report;
    StageTimer timer;
};

/// True when the field is negative on average over the outermost cells of the domain,
/// i.e. the extracted inside/outside would be inverted.
inline bool orientation_inverted(const ImplicitField& field, const DomainCells& domain)
{
    double sum = 0.0;
    std::size_t n = 0;
    const auto& lo = domain.box_lo();
    const auto& hi = domain.box_hi();
    for (const auto& c : domain.cells()) {
        bool face = false;
        for (int a = 0; a < 3; ++a)
            face = face || c[a] == lo[a] || c[a] == hi[a] - 1;
        if (!face)
            continue;
        sum += field.eval_grid(Vec3(c[0] + 0.5, c[1] + 0.5, c[2] + 0.5), DerivOrder::value).value;
        ++n;
    }
    return n > 0 && sum < 0.0;
}

namespace detail {

inline std::size_t memory_estimate(const PointCloud& cloud, const SparseVoxelHierarchy& h, const DomainCells& omega,
                                   const GalerkinSystem& sys, const TriangleMesh& mesh)
{
    std::size_t bytes = cloud.size() * sizeof(OrientedPoint);
    for (int s = 1; s <= h.num_scales(); ++s)
        for (const auto& v : h.voxels(s))
            bytes += sizeof(VoxelRecord) + v.points.size() * sizeof(std::uint32_t) + 64;
    std::size_t box = 1, box1 = 1;
    for (int a = 0; a < 3; ++a) {
        box *= std::size_t(omega.box_hi()[a] - omega.box_lo()[a]);
        box1 *= std::size_t(omega.box_hi()[a] - omega.box_lo()[a] + 1);
    }
    bytes += omega.size() * (sizeof(CellIndex) + sizeof(Vec3)) + (box + box1) * sizeof(long long);
    bytes += sys.A.nonzeros() * (sizeof(double) + sizeof(std::uint32_t)) + (sys.A.rows() + 1) * sizeof(std::size_t);
    bytes += sys.dofs.size() * (sizeof(Dof) + 64) + sys.pairs.size() * (8 + sizeof(PairIntegrals));
    bytes += 8 * sys.b.size() * sizeof(double); // rhs, solution and CG work vectors
    bytes += box1 * sizeof(double);               // marching-cubes corner cache
    bytes += mesh.vertices.size() * 2 * sizeof(Vec3) + mesh.triangles.size() * sizeof(Triangle);
    return bytes;
}

} // namespace detail

/// Runs the full pipeline on an in-memory cloud.
inline Reconstruction reconstruct_cloud(const PointCloud& input, const Config& cfg)
{
    cfg.validate();
    Reconstruction out;
    auto& T = out.timer;
    auto& R = out.report;
    const auto spec = T.run("basis", [&] { return cfg.basis_spec(); });
    if (input.empty())
        throw StageError("load", Error(ErrorKind::EmptyCloud, "input cloud is empty"));

    auto [cloud, transform] = T.run("normalize", [&] {
        if (cfg.io.normalize)
            return normalize_to_unit_cube(input, cfg.io.padding);
        return std::pair<PointCloud, Transform>(input, Transform{});
    });
    if (cfg.solver.screening != 0.0) {
        std::vector<OrientedPoint> pts = cloud.points();
        for (auto& p : pts)
            p.screening += cfg.solver.screening;
        cloud = PointCloud(std::move(pts));
    }
    R.transform = transform;
    R.num_points = cloud.size();

    const double b = cfg.scaffold.base_size;
    out.hierarchy = T.run("scaffold", [&] {
        return build_hierarchy(cloud, b, cfg.scaffold.num_scales, cfg.adaptive_depth());
    });
    auto& h = out.hierarchy;
    for (int s = 1; s <= h.num_scales(); ++s)
        R.voxels_per_scale.push_back(h.voxels(s).size());
    DomainCells omega = T.run("domain", [&] { return rasterize_domain(h); });
    R.domain_cells = omega.size();

    std::optional<PriorOutputs> prior;
    if (cfg.prior.enabled)
        prior = T.run("prior", [&] {
            const auto w = cfg.prior.weights.empty()
                             ? WeightBundle::random(cfg.prior.channels, h.num_scales(), spec.free_dimension(),
                                                    cfg.prior.seed)
                             : load_weights(cfg.prior.weights);
            auto p = run_prior(h, cloud, w, spec, {cfg.prior.n_min, cfg.prior.n_max});
            attach_basis_params(h, p);
            return p;
        });

    bool estimated = false;
    cloud = T.run("normals", [&] {
        auto source = cfg.normals.source;
        if (source == NormalSource::automatic)
            source = cloud.has_normals() ? NormalSource::file : NormalSource::estimate;
        switch (source) {
        case NormalSource::file:
            R.normal_source = "file";
            if (!cloud.has_normals())
                throw Error(ErrorKind::MissingNormals, "input has no normals");
            return cloud;
        case NormalSource::prior:
            R.normal_source = "prior";
            estimated = true;
            return cloud.with_normals(point_normals_from_prior(h, *prior, cloud.size()));
        default: {
            R.normal_source = "estimate";
            estimated = true;
            const auto est = estimate_normals(cloud, cfg.normals.k);
            std::vector<Vec3> n;
            for (const auto& e : est)
                n.push_back(e.normal);
            return cloud.with_normals(n);
        }
        }
    });
    omega = T.run("splat", [&] { return splat_normal_field(cloud, std::move(omega), b); });

    const SolverWeights weights = cfg.weights();
    R.mode = weights.lambda_H == 0.0 ? "screened-Poisson" : "hessian-regularized";
    const AssemblyOptions aopt{cfg.basis.quad_order, cfg.run.workers};
    GalerkinSystem sys = T.run("assemble", [&] {
        return weights.lambda_H == 0.0 ? assemble_screened_poisson(h, omega, spec, weights.lambda_P, cloud, aopt)
                                       : assemble_system(h, omega, spec, weights, cloud, aopt);
    });
    R.dof = sys.dofs.size();
    R.nonzeros = sys.A.nonzeros();
    R.tolerance = cfg.solver.tolerance;

    out.field = T.run("solve", [&] {
        const int max_iter =
            cfg.solver.max_iterations > 0 ? cfg.solver.max_iterations : int(std::max<std::size_t>(10 * sys.dofs.size(), 10));
        const auto res = solve_coefficients(sys, cfg.solver.tolerance, max_iter);
        R.cg_iterations = res.iterations;
        R.residual = res.residual;
        ImplicitField f(sys.dofs, res.coefficients, b);
        if (estimated && orientation_inverted(f, omega)) {
            R.orientation_flipped = true;
            return f.negated();
        }
        return f;
    });

    TriangleMesh mesh = T.run("extract", [&] {
        return extract_mesh(out.field, rasterize_domain(h, 1), cfg.extract.iso);
    });
    const std::size_t before = mesh.vertices.size();
    mesh = T.run("floaters", [&] { return remove_floaters(mesh, cloud, cfg.floater_tau()); });
    R.floater_vertices_removed = before - mesh.vertices.size();
    R.vertices = mesh.vertices.size();
    R.triangles = mesh.triangles.size();
    R.peak_memory_estimate_bytes = detail::memory_estimate(cloud, h, omega, sys, mesh);
    out.mesh = transform_mesh(mesh, transform.inverse());
    return out;
}

namespace detail {

inline void write_text(const std::filesystem::path& path, const std::string& text)
{
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f || !f.write(text.data(), std::streamsize(text.size())))
        throw Error(ErrorKind::IoError, "cannot write " + path.string());
}

} // namespace detail

/// load -> ... -> write; returns the report. Errors carry the failing stage.
inline RunReport reconstruct(const Config& cfg)
{
    StageTimer load_timer;
    const auto cloud = load_timer.run("load", [&] {
        if (cfg.io.input.empty())
            throw Error(ErrorKind::InvalidConfig, "io.input is not set");
        return load_point_cloud(cfg.io.input);
    });
    auto rec = reconstruct_cloud(cloud, cfg);
    auto& T = rec.timer;
    T.seconds.insert(T.seconds.begin(), load_timer.seconds.begin(), load_timer.seconds.end());
    T.run("write", [&] {
        if (cfg.io.output.has_parent_path())
            std::filesystem::create_directories(cfg.io.output.parent_path());
        write_mesh(rec.mesh, cfg.io.output);
        auto j = rec.report.to_json();
        j["input"] = cfg.io.input.filename().string();
        j["output"] = cfg.io.output.filename().string();
        detail::write_text(cfg.report_path(), j.dump(2) + "\n");
    });
    if (cfg.run.timing) {
        nlohmann::ordered_json t;
        for (const auto& [stage, sec] : T.seconds)
            t["stages"][stage] = sec;
        t["total_seconds"] = T.total();
        t["workers"] = resolve_workers(cfg.run.workers);
        auto p = cfg.report_path();
        p += ".timing.json";
        detail::write_text(p, t.dump(2) + "\n");
    }
    return rec.report;
}

/// Scores a predicted mesh against ground truth and appends one CSV row (header on a new file).
inline MetricsReport evaluate(const std::filesystem::path& pred, const std::filesystem::path& gt,
                              const std::filesystem::path& csv, const Config& cfg = {})
{
    StageTimer T;
    const auto mp = T.run("load", [&] { return load_mesh(pred); });
    const auto mg = T.run("load", [&] { return load_mesh(gt); });
    const MetricsOptions opt{cfg.metrics.surface_samples, cfg.metrics.f_score_tau, cfg.metrics.iou_samples,
                             cfg.metrics.seed};
    auto report = T.run("evaluate", [&] { return evaluate_meshes(mp, mg, opt, pred.stem().string()); });
    T.run("write", [&] {
        const bool fresh = !std::filesystem::exists(csv) || std::filesystem::file_size(csv) == 0;
        if (csv.has_parent_path())
            std::filesystem::create_directories(csv.parent_path());
        std::ofstream f(csv, std::ios::app | std::ios::binary);
        if (!f)
            throw Error(ErrorKind::IoError, "cannot write " + csv.string());
        if (fresh)
            f << MetricsReport::csv_header() << '\n';
        f << report.csv_row() << '\n';
    });
    return report;
}

/// Assembles (no solve) and writes the coordinate-format matrix and rhs.
inline GalerkinSystem assemble_from_config(const Config& cfg)
{
    cfg.validate();
    StageTimer T;
    const auto raw = T.run("load", [&] { return load_point_cloud(cfg.io.input); });
    const auto spec = T.run("basis", [&] { return cfg.basis_spec(); });
    auto cloud = T.run("normalize", [&] {
        return cfg.io.normalize ? normalize_to_unit_cube(raw, cfg.io.padding).first : raw;
    });
    const double b = cfg.scaffold.base_size;
    auto h = T.run("scaffold", [&] { return build_hierarchy(cloud, b, cfg.scaffold.num_scales, cfg.adaptive_depth()); });
    if (cfg.prior.enabled)
        T.run("prior", [&] {
            const auto w = cfg.prior.weights.empty()
                             ? WeightBundle::random(cfg.prior.channels, h.num_scales(), spec.free_dimension(),
                                                    cfg.prior.seed)
                             : load_weights(cfg.prior.weights);
            attach_basis_params(h, run_prior(h, cloud, w, spec, {cfg.prior.n_min, cfg.prior.n_max}));
        });
    cloud = T.run("normals", [&] {
        if (cloud.has_normals() && cfg.normals.source != NormalSource::estimate)
            return cloud;
        if (cfg.normals.source == NormalSource::file)
            throw Error(ErrorKind::MissingNormals, "input has no normals");
        std::vector<Vec3> n;
        for (const auto& e : estimate_normals(cloud, cfg.normals.k))
            n.push_back(e.normal);
        return cloud.with_normals(n);
    });
    const auto omega = T.run("splat", [&] { return splat_normal_field(cloud, rasterize_domain(h), b); });
    const auto weights = cfg.weights();
    const AssemblyOptions aopt{cfg.basis.quad_order, cfg.run.workers};
    return T.run("assemble", [&] {
        return weights.lambda_H == 0.0 ? assemble_screened_poisson(h, omega, spec, weights.lambda_P, cloud, aopt)
                                       : assemble_system(h, omega, spec, weights, cloud, aopt);
    });
}

inline GalerkinSystem dump_system(const Config& cfg)
{
    auto sys = assemble_from_config(cfg);
    StageTimer T;
    T.run("write", [&] {
        for (const auto& p : {cfg.dump.matrix, cfg.dump.rhs})
            if (p.has_parent_path())
                std::filesystem::create_directories(p.parent_path());
        svrecon::dump_system(sys, cfg.dump.matrix, cfg.dump.rhs);
    });
    return sys;
}

} // namespace svrecon

#endif // SVRECON_PIPELINE_HPP
