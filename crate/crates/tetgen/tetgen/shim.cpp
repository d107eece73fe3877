// File-exchange entry point around the TetGen library interface.
#include <stdio.h>
#include <string.h>

#include "tetgen.h"

static int write_outputs(tetgenio &out, const char *out_base) {
    char path[FILENAMESIZE];
    int first = out.firstnumber;

    snprintf(path, sizeof(path), "%s.node", out_base);
    FILE *f = fopen(path, "w");
    if (f == NULL) {
        return 20;
    }
    fprintf(f, "%d  3  0  0\n", out.numberofpoints);
    for (int i = 0; i < out.numberofpoints; i++) {
        fprintf(f, "%d  %.17g  %.17g  %.17g\n", i + first, out.pointlist[3 * i],
                out.pointlist[3 * i + 1], out.pointlist[3 * i + 2]);
    }
    fclose(f);

    snprintf(path, sizeof(path), "%s.ele", out_base);
    f = fopen(path, "w");
    if (f == NULL) {
        return 20;
    }
    fprintf(f, "%d  %d  0\n", out.numberoftetrahedra, out.numberofcorners);
    for (int i = 0; i < out.numberoftetrahedra; i++) {
        fprintf(f, "%d", i + first);
        for (int j = 0; j < 4; j++) {
            fprintf(f, "  %d", out.tetrahedronlist[i * out.numberofcorners + j]);
        }
        fprintf(f, "\n");
    }
    fclose(f);
    return 0;
}

extern "C" int cmac_tetgen_run(const char *switches, const char *in_base, const char *out_base) {
    tetgenio in, out;
    char base[FILENAMESIZE];
    strncpy(base, in_base, FILENAMESIZE - 1);
    base[FILENAMESIZE - 1] = '\0';
    try {
        if (!in.load_plc(base, (int)tetgenbehavior::POLY)) {
            return 10;
        }
        tetrahedralize(switches, &in, &out, NULL, NULL, NULL);
    } catch (int code) {
        return code == 0 ? 99 : code;
    } catch (...) {
        return 98;
    }
    if (out.numberoftetrahedra == 0) {
        return 30;
    }
    return write_outputs(out, out_base);
}
