import unittest
import os
import sys
import subprocess
import tempfile

REPO_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))

# Prints the file of every file handler on the root logger.
SHOW_HANDLERS = ('import logging, pyspmi\n'
                 'for h in logging.getLogger().handlers:\n'
                 '    print(getattr(h, "baseFilename", "-"))\n')


class LoggingConfigTestCase(unittest.TestCase):
    """Logging is configured at import, so each case imports pyspmi in a
    fresh interpreter."""

    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.dir = self._tmp.name

    def tearDown(self):
        self._tmp.cleanup()

    def run_import(self, **env_vars):
        env = dict(os.environ)
        env.pop('PYSPMI_LOG_FILE', None)
        env.pop('PYSPMI_LOG_LEVEL', None)
        env.update(env_vars)
        env['PYTHONPATH'] = os.pathsep.join(
            [REPO_DIR] + [p for p in [env.get('PYTHONPATH')] if p])
        return subprocess.run([sys.executable, '-c', SHOW_HANDLERS],
                              cwd=self.dir, env=env, capture_output=True,
                              text=True, timeout=120)

    def test_log_file_override(self):
        log_file = os.path.join(self.dir, 'run.log')
        result = self.run_import(PYSPMI_LOG_FILE=log_file)
        self.assertEqual(result.returncode, 0, result.stderr)

        files = result.stdout.split()
        self.assertIn(log_file, files)
        # The console handler has no file.
        self.assertIn('-', files)
        self.assertTrue(os.path.isfile(log_file))

    def test_default_log_file(self):
        result = self.run_import()
        self.assertEqual(result.returncode, 0, result.stderr)
        expected = os.path.realpath(os.path.join(self.dir, 'pyspmi.log'))
        self.assertIn(expected, [os.path.realpath(f)
                                 for f in result.stdout.split()])

    def test_level_override(self):
        code = ('import logging, pyspmi\n'
                'print(logging.getLogger().level)\n')
        env = dict(os.environ, PYSPMI_LOG_LEVEL='debug',
                   PYTHONPATH=REPO_DIR)
        env.pop('PYSPMI_LOG_FILE', None)
        result = subprocess.run([sys.executable, '-c', code], cwd=self.dir,
                                env=env, capture_output=True, text=True,
                                timeout=120)
        self.assertEqual(result.returncode, 0, result.stderr)
        self.assertEqual(result.stdout.strip(), str(10))


if __name__ == '__main__':
    unittest.main()
