#include <CLI11.hpp>

#include <iostream>

#include "neurosem/error.hpp"
#include "neurosem/stub_endpoint.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Local image endpoint stub for prompt dispatch", "neurosem_stub"};
  int port = 8765;
  std::string fail_marker = "FAIL";
  app.add_option("--port", port)->capture_default_str();
  app.add_option("--fail-marker", fail_marker, "Prompts containing this text get HTTP 503")->capture_default_str();
  CLI11_PARSE(app, argc, argv);
  try {
    neurosem::StubEndpoint stub(fail_marker);
    std::cout << "listening on http://127.0.0.1:" << port << "/generate" << std::endl;
    stub.listen(port);
  } catch (const neurosem::Error& e) {
    std::cerr << e.what() << "\n";
    return 5;
  }
  return 0;
}
