"""
Integração com pytest: expõe cada teste registrado em ``run_all_tests`` das
suítes ``test_suite_simple.py`` e ``test_suite.py`` como um item do pytest,
executado pelo próprio ``run_test`` da suíte, na mesma ordem.
"""

import importlib
import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

SUITES = {
    'test_suite_simple.py': ('test_suite_simple', 'SimpleTestSuite'),
    'test_suite.py': ('test_suite', 'TestSuite'),
}


def pytest_collect_file(parent, file_path):
    if file_path.name in SUITES and file_path.parent == parent.config.rootpath:
        return SuiteFile.from_parent(parent, path=file_path)
    return None


class SuiteFile(pytest.File):
    def collect(self):
        module_name, class_name = SUITES[self.path.name]
        module = importlib.import_module(module_name)
        suite = getattr(module, class_name)()

        registrados = []
        original = suite.run_test
        suite.run_test = lambda test_id, name, func: registrados.append((test_id, name, func))
        suite.run_all_tests()
        suite.run_test = original

        self.suite = suite
        for test_id, name, func in registrados:
            yield SuiteItem.from_parent(self, name=test_id, descricao=name, func=func)

    def setup(self):
        if hasattr(self.suite, 'setup') and not self.suite.setup():
            raise RuntimeError("Falha ao preparar ambiente de testes")

    def teardown(self):
        if hasattr(self.suite, 'teardown'):
            self.suite.teardown()


class SuiteItem(pytest.Item):
    def __init__(self, *, descricao, func, **kwargs):
        super().__init__(**kwargs)
        self.descricao = descricao
        self.func = func

    def runtest(self):
        suite = self.parent.suite
        suite.run_test(self.name, self.descricao, self.func)
        resultado = suite.results[-1]
        if not resultado.passed:
            raise AssertionError(f"{self.name} ({self.descricao}): {resultado.message}")

    def reportinfo(self):
        return self.path, None, f"{self.name}: {self.descricao}"
