import unittest
import os
import tempfile

from pyspmi import svg


class SVGTestCase(unittest.TestCase):

    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.dir = self._tmp.name

    def tearDown(self):
        self._tmp.cleanup()

    def read(self, name):
        with open(os.path.join(self.dir, name), 'r') as f:
            return f.read()

    def test_mi_and_binning(self):
        path = os.path.join(self.dir, 'layer_1.svg')
        svg.mi_and_binning_plot(path, [0, 10, 20], [1.2, 1.1, 0.9],
                                [2.0, 1.5, 1.0], 1,
                                std_error=[0.01, 0.01, 0.02])
        text = self.read('layer_1.svg')
        self.assertTrue(text.lstrip().startswith('<?xml'))
        self.assertIn('Layer 1', text)

    def test_without_mi(self):
        path = os.path.join(self.dir, 'layer_2.svg')
        svg.mi_and_binning_plot(path, [0, 10], None, [2.0, 1.5], 2)
        self.assertIn('H(Bin(T))', self.read('layer_2.svg'))

    def test_identical_data_identical_files(self):
        for name in ('a.svg', 'b.svg'):
            svg.series_plot(os.path.join(self.dir, name),
                            {'T1': ([0, 1, 2], [0.5, 0.4, 0.3])},
                            'epoch', 'I(X;T) [nats]', title='tanh1',
                            envelopes={'T1': ([0, 1, 2], [0.4, 0.3, 0.2],
                                              [0.6, 0.5, 0.4])})
        self.assertEqual(self.read('a.svg'), self.read('b.svg'))


if __name__ == '__main__':
    unittest.main()
