#include <doctest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

namespace {

const std::string kCli = ADJOINT_CLI_PATH;
const std::string kCorpus = ADJOINT_CORPUS_DIR;

struct Run {
    int status = -1;
    std::string out;
};

Run run(const std::string& args, bool merge_stderr = false) {
    Run r;
    std::string cmd = kCli + " " + args + (merge_stderr ? " 2>&1" : " 2>/dev/null");
    FILE* p = popen(cmd.c_str(), "r");
    REQUIRE(p != nullptr);
    std::array<char, 4096> buf{};
    std::size_t n;
    while ((n = fread(buf.data(), 1, buf.size(), p)) > 0) r.out.append(buf.data(), n);
    int st = pclose(p);
    r.status = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
    return r;
}

std::string corpus(const std::string& name) { return kCorpus + "/" + name + ".tsl"; }

std::string temp_file(const std::string& name, const std::string& text) {
    auto path = std::filesystem::temp_directory_path() / ("adjoint_cli_" + name);
    std::ofstream(path) << text;
    return path.string();
}

}  // namespace

TEST_CASE("grad prints the gradient source") {
    Run r = run("grad " + corpus("square") + " f --wrt 0");
    CHECK(r.status == 0);
    CHECK(r.out ==
          "def dfdx(x, by=1.0):\n"
          "    # Grad of: y = x * x\n"
          "    _bx = unbroadcast(by * x, x)\n"
          "    _bx2 = unbroadcast(by * x, x)\n"
          "    bx = _bx\n"
          "    bx = add_grad(bx, _bx2)\n"
          "    return bx\n");
}

TEST_CASE("grad options") {
    CHECK(run("grad " + corpus("loop") + " loop --wrt 0 -O0").status == 0);
    CHECK(run("grad " + corpus("loop") + " loop --wrt 0 --truncate 0:2").status == 0);
    CHECK(run("grad " + corpus("loop") + " loop --wrt 0 --truncate 7:2").status == 2);
    CHECK(run("grad " + corpus("square") + " f --wrt 0 --dump-cfg", true).out.find("digraph") != std::string::npos);
    CHECK(run("grad " + corpus("square") + " f --wrt 0 --preserve-result").out.find("return result, bx") !=
          std::string::npos);
}

TEST_CASE("run evaluates functions and gradients") {
    CHECK(run("run " + corpus("square") + " f --args '[3.0]'").out == "9.0\n");
    Run g = run("run " + corpus("square") + " dfdx --args '[2.0]'");
    CHECK(g.status == 0);
    CHECK(g.out == "4.0\n");
    CHECK(run("run " + corpus("loop") + " loop --args '[[2.0, 2.0], 1]'").out == "2.0\n");
}

TEST_CASE("check succeeds on correct gradients") {
    Run r = run("check " + corpus("mlp") + " mlp --wrt 1,2,3,4 --json");
    CHECK(r.status == 0);
    auto j = nlohmann::json::parse(r.out);
    CHECK(j["pass"] == true);
    CHECK(j["points"] == 10);
    CHECK(run("check " + corpus("loop") + " loop --wrt 0").status == 0);
}

TEST_CASE("check fails on a wrong adjoint") {
    std::string src = temp_file("tanh.tsl", "def f(x):\n    return tanh(x)\n");
    std::string adj = temp_file("bad_adj.tsl", "def adjoint_tanh(result, arg1):\n    d[arg1] = d[result]\n");
    Run r = run("check " + src + " f --wrt 0 --adjoints " + adj + " --json");
    CHECK(r.status == 1);
    CHECK(nlohmann::json::parse(r.out)["pass"] == false);
}

TEST_CASE("usage and input errors") {
    CHECK(run("").status == 2);
    CHECK(run("bogus").status == 2);
    CHECK(run("grad /nonexistent/file.tsl f --wrt 0").status == 2);
    CHECK(run("run " + corpus("square") + " f --args '[1.0, 2.0]'").status == 2);
    CHECK(run("run " + corpus("square") + " f --args '[1.0'").status == 2);
    std::string broken = temp_file("broken.tsl", "def f(x)\n    return x\n");
    CHECK(run("grad " + broken + " f --wrt 0").status == 1);
}

TEST_CASE("opt and bench") {
    std::string src = temp_file("opt.tsl", "def f(x):\n    a = x * 1.0\n    b = a\n    return a\n");
    Run r = run("opt " + src + " f");
    CHECK(r.status == 0);
    CHECK(r.out == "def f(x):\n    a = x\n    return a\n");
    Run b = run("bench --program loop --sizes 2,4 --runs 3");
    CHECK(b.status == 0);
    CHECK(b.out.rfind("size,median_ns,mean_ns,first_call_ns\n", 0) == 0);
}
