import unittest
from unittest.mock import patch
import threading

import numpy as np

from pyspmi import utils


class SubstreamTestCase(unittest.TestCase):

    def test_reproducible(self):
        a = utils.substream(3, 1, 2).normal(size=5)
        b = utils.substream(3, 1, 2).normal(size=5)
        np.testing.assert_array_equal(a, b)

    def test_counters_differ(self):
        a = utils.substream(3, 1).normal(size=5)
        b = utils.substream(3, 2).normal(size=5)
        c = utils.substream(4, 1).normal(size=5)
        self.assertFalse(np.array_equal(a, b))
        self.assertFalse(np.array_equal(a, c))

    def test_numpy_integers_accepted(self):
        a = utils.substream(np.int64(7)).uniform()
        b = utils.substream(7).uniform()
        self.assertEqual(a, b)

    def test_bad_seeds(self):
        with self.assertRaises(TypeError):
            utils.substream(1.5)

        with self.assertRaises(TypeError):
            utils.substream(True)

        with self.assertRaises(ValueError):
            utils.substream(-1)


class DeriveSeedTestCase(unittest.TestCase):

    def test_stable(self):
        self.assertEqual(utils.derive_seed(0, 5, 2),
                         utils.derive_seed(0, 5, 2))

    def test_counters_matter(self):
        seeds = {utils.derive_seed(0, e, l) for e in range(5)
                 for l in range(1, 4)}
        self.assertEqual(len(seeds), 15)

    def test_non_negative_int(self):
        s = utils.derive_seed(12, 1)
        self.assertIsInstance(s, int)
        self.assertGreaterEqual(s, 0)
        # Usable as a seed in turn.
        utils.substream(s)


class ThreadsTestCase(unittest.TestCase):

    def tearDown(self):
        utils.set_default_threads(None)

    def test_default_from_config(self):
        utils.set_default_threads(None)
        self.assertEqual(utils.get_default_threads(),
                         utils.read_config()['threads'])

    def test_set(self):
        utils.set_default_threads(4)
        self.assertEqual(utils.get_default_threads(), 4)

    def test_bad_values(self):
        for bad in (0, -2, 1.5, '2'):
            with self.subTest(threads=bad):
                with self.assertRaises(ValueError):
                    utils.set_default_threads(bad)


class ThreadMapTestCase(unittest.TestCase):

    def test_order_preserved(self):
        for threads in (1, 2, 8):
            with self.subTest(threads=threads):
                out = utils.thread_map(lambda x: x * x, range(20),
                                       threads=threads)
                self.assertEqual(out, [x * x for x in range(20)])

    def test_serial_when_one_thread(self):
        idents = utils.thread_map(lambda _: threading.get_ident(), range(4),
                                  threads=1)
        self.assertEqual(set(idents), {threading.get_ident()})

    def test_uses_default(self):
        with patch('pyspmi.utils.get_default_threads',
                   return_value=1) as p:
            self.assertEqual(utils.thread_map(str, [1, 2]), ['1', '2'])
        p.assert_called_once()

    def test_empty(self):
        self.assertEqual(utils.thread_map(str, [], threads=4), [])


class ConfigHashTestCase(unittest.TestCase):

    def test_key_order_irrelevant(self):
        self.assertEqual(utils.config_hash({'a': 1, 'b': [1, 2]}),
                         utils.config_hash({'b': [1, 2], 'a': 1}))

    def test_values_matter(self):
        self.assertNotEqual(utils.config_hash({'a': 1}),
                            utils.config_hash({'a': 2}))

    def test_hex_sha256(self):
        h = utils.config_hash({})
        self.assertEqual(len(h), 64)
        int(h, 16)

    def test_canonical_json(self):
        self.assertEqual(utils.canonical_json({'b': 1, 'a': [1, 2]}),
                         '{"a":[1,2],"b":1}')


class ReadConfigTestCase(unittest.TestCase):

    def test_sections(self):
        config = utils.read_config()
        for section in ('gmm_entropy', 'estimator', 'theory', 'clustering',
                        'networks', 'toys', 'experiment', 'threads'):
            self.assertIn(section, config)


class ListToStringTestCase(unittest.TestCase):

    def test_single(self):
        self.assertEqual(utils.list_to_string(['tanh'], 'or'), 'tanh')

    def test_two(self):
        self.assertEqual(utils.list_to_string(['a', 'b'], 'and'),
                         'a, and b')

    def test_three(self):
        self.assertEqual(utils.list_to_string(['a', 'b', 'c'], 'or'),
                         'a, b, or c')


if __name__ == '__main__':
    unittest.main()
